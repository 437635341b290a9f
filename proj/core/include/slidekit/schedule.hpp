#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace slidekit {

enum class ParamGroupName { vision_tower, projector_mlp, wsi_projector, llm_body };

std::string to_string(ParamGroupName name);
ParamGroupName param_group_from_string(const std::string& name);

struct ParamGroup {
    ParamGroupName name = ParamGroupName::projector_mlp;
    double learning_rate = 0.0;  // ignored when frozen
    bool frozen = true;
};

enum class LrSchedule { cosine };

/// One stage of the four-stage schedule: which parameter groups train, at
/// which rates, for how long, and on which data mix.
struct StagePlan {
    int stage = 1;
    std::vector<ParamGroup> groups;  // all four groups, fixed order
    int epochs = 1;
    double warmup_ratio = 0.03;
    LrSchedule schedule = LrSchedule::cosine;
    std::map<std::string, double> data_mix;  // source -> fraction, sums to 1

    const ParamGroup& group(ParamGroupName name) const;
    std::vector<ParamGroupName> trainable() const;
};

/// The exact per-stage freeze/LR assignment:
///   stage 1: projector_mlp @ 1e-3        (warmup 0.03, 1 epoch)
///   stage 2: vision_tower @ 2e-6, projector_mlp @ 1e-5, llm_body @ 1e-5
///            (warmup 0.03, 1 epoch)
///   stage 3: wsi_projector @ 5e-6        (warmup 0.1, 1 epoch)
///   stage 4: vision_tower @ 2e-6, projector_mlp @ 1e-5, wsi_projector @ 1e-5,
///            llm_body @ 1e-5             (warmup 0.1, 5 epochs, 15% patch mix)
StagePlan build_stage_plan(int stage);

/// Linear warmup to the group's base rate over warmup_ratio * total_steps,
/// then cosine decay to zero. Querying a frozen group is an error.
double lr_at(const StagePlan& plan, ParamGroupName group, std::int64_t step,
             std::int64_t total_steps);

enum class SampleSource { patch, wsi };
enum class MixMode {
    bernoulli,  // each slot draws source=patch with probability patch_fraction
    quota,      // exactly round(patch_fraction * batch) patch slots, shuffled
};

/// Stage-4 style data mixer over a patch pool and a WSI pool.
struct MixSampler {
    std::size_t patch_pool_size = 0;
    std::size_t wsi_pool_size = 0;
    double patch_fraction = 0.15;
    MixMode mode = MixMode::bernoulli;
    std::mt19937_64 rng;

    MixSampler(std::uint64_t seed, std::size_t patch_pool, std::size_t wsi_pool,
               double fraction = 0.15, MixMode mix_mode = MixMode::bernoulli);
};

/// Draws batch_size (source, index) pairs. Drawing from an empty pool is an
/// error; a pool that can never be drawn (fraction 0 or 1) may be empty.
std::vector<std::pair<SampleSource, std::size_t>> sample_mixed_batch(MixSampler& sampler,
                                                                     int batch_size);

/// Human-readable audit report of one or all stage plans.
std::string stage_plan_report_json(const std::vector<StagePlan>& plans);

/// Desk-scale training snapshot: stage tag, step, and named parameter
/// tensors grouped as "<group>/<tensor>". Values are stored as float32.
struct TrainState {
    int stage = 0;
    std::int64_t step = 0;
    std::map<std::string, std::vector<float>> tensors;
};

inline constexpr std::uint32_t kTrainStateMagic = 0x31534B53u;  // "SKS1"

void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace slidekit
