#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seprl/common.hpp"
#include "seprl/datagen.hpp"
#include "seprl/exbmdp.hpp"

namespace seprl {

// ---------------------------------------------------------------------------
// Observation decoding
// ---------------------------------------------------------------------------

/// Inverse of the emission map, exposed as an unlabeled factor pair: the
/// block structure makes decoding exact, but nothing here says which factor
/// is the endogenous one. This is the only environment knowledge available
/// to model training.
struct FactorDecoder {
    std::uint64_t env_fingerprint = 0;
    double discount = 0.95;
    std::array<int, 2> n_factor{0, 0};
    std::vector<std::array<int, 2>> obs_to_factors;

    std::array<int, 2> decode(int obs) const {
        if (obs < 0 || obs >= static_cast<int>(obs_to_factors.size()))
            throw std::out_of_range("decode: observation id out of range");
        return obs_to_factors[static_cast<std::size_t>(obs)];
    }

    /// Factor order follows env.endo_factor_index: the endogenous state lands
    /// in that slot.
    static FactorDecoder from_env(const EnvArtifact& env);
};

json decoder_to_json(const FactorDecoder& dec);
FactorDecoder decoder_from_json(const json& j);
void save_decoder(const FactorDecoder& dec, const std::filesystem::path& path);
FactorDecoder load_decoder(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sampling schedules
// ---------------------------------------------------------------------------

enum class SampleMode { conservative, random };

std::string sample_mode_name(SampleMode m);
SampleMode sample_mode_from_name(const std::string& name);

struct Segment {
    int traj = 0;
    int start = 0;
    int len = 0;  // number of actions covered
};

struct Batch {
    const OfflineDataset* ds = nullptr;
    std::vector<Segment> segments;

    /// Distinct policy ids present in the batch.
    std::vector<int> policy_ids() const;
};

/// Epoch-indexed batch source. Conservative mode trains on the single
/// trajectory tau_j with j ≤ min(m, n) (cycling j = m while m <= n), then
/// falls back to uniform sampling over the whole dataset; random mode samples
/// uniformly from the start.
struct SamplingSchedule {
    SampleMode mode = SampleMode::conservative;
    int epoch = 1;  // m, 1-based
    int batch_segments = 16;
    int segment_len = 50;

    Batch next_batch(const OfflineDataset& ds, Rng& rng);
};

double batch_action_entropy(const Batch& batch);

// ---------------------------------------------------------------------------
// Factored likelihood
// ---------------------------------------------------------------------------

struct Partition {
    int endo_factor = 0;  // which decoder factor is treated as endogenous
    bool degenerate = false;
};

enum class LoglikMode { plugin, heldout };

struct FactoredLogLik {
    double total = 0.0;       // action + endo + exo terms
    double action_term = 0.0; // sum ln p(a_t | e_t)
    double endo_term = 0.0;   // sum ln p(e_t | e_{t-1}, a_{t-1})
    double exo_term = 0.0;    // sum ln p(x_t | x_{t-1})
    double obs_term = 0.0;    // identically zero under the exact decoder
    long long steps = 0;
    bool neg_inf = false;     // alpha = 0 hit an unseen event
};

/// Trajectory log-likelihood under the candidate partition, with every
/// conditional replaced by its add-alpha empirical estimate fit on the same
/// batch (plug-in). Held-out mode fits on even segments and scores odd ones.
FactoredLogLik factored_loglik(const Batch& batch, const FactorDecoder& decoder,
                               const Partition& partition, double alpha,
                               LoglikMode mode = LoglikMode::plugin);

// ---------------------------------------------------------------------------
// Partition discovery
// ---------------------------------------------------------------------------

struct PartitionResult {
    Partition partition;
    std::array<double, 2> loglik{0.0, 0.0};           // accumulated per candidate
    std::array<double, 2> action_dependence{0.0, 0.0};
};

/// Scores both candidate partitions over the schedule's batches and returns
/// the argmax; ties go to the candidate whose endogenous transitions react
/// more to the action (max total-variation spread across actions). Flags the
/// result degenerate when neither candidate shows action dependence.
PartitionResult discover_partition(const OfflineDataset& ds, const FactorDecoder& decoder,
                                   SamplingSchedule schedule, double alpha, int epochs,
                                   std::uint64_t seed, double degenerate_tol = 0.02,
                                   LoglikMode mode = LoglikMode::plugin);

// ---------------------------------------------------------------------------
// Ensemble models
// ---------------------------------------------------------------------------

struct EnsembleModel {
    bool joint = false;
    Partition partition;             // meaningful when !joint
    std::array<int, 2> factor_dims{0, 0};
    int n_states = 0;                // endogenous (or joint) state count
    int n_exo_states = 0;            // 0 for the joint baseline
    int n_act = 0;
    double alpha = 0.1;
    double discount = 0.95;
    std::vector<transtable> members; // K transition tables [s][a][s']
    numvecvec exo_trans;             // empty for the joint baseline
    numvecvec reward;                // [s][a]
    std::vector<std::vector<long long>> visit_counts;  // [s][a], full data
    std::uint64_t dataset_fingerprint = 0;
    std::uint64_t env_fingerprint = 0;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;

    int ensemble_size() const { return static_cast<int>(members.size()); }
};

/// Each member fits add-alpha counts on its own trajectory-level bootstrap
/// resample; the exogenous table and the reward table fit once on the full
/// dataset. Unvisited rows are uniform.
EnsembleModel fit_separated_model(const OfflineDataset& ds, const FactorDecoder& decoder,
                                  const Partition& partition, int K, double alpha,
                                  std::uint64_t seed, bool bootstrap = true,
                                  Exec exec = Exec::par);

/// Baseline that models the undecomposed latent state z = (factor0, factor1).
EnsembleModel fit_joint_model(const OfflineDataset& ds, const FactorDecoder& decoder, int K,
                              double alpha, std::uint64_t seed, bool bootstrap = true,
                              Exec exec = Exec::par);

json model_to_json(const EnsembleModel& model);
EnsembleModel model_from_json(const json& j);
void save_model(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_model(const std::filesystem::path& path);

}  // namespace seprl
