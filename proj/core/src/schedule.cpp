#include "slidekit/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slidekit/common.hpp"
#include "slidekit/rng.hpp"

namespace slidekit {

std::string to_string(ParamGroupName name) {
    switch (name) {
        case ParamGroupName::vision_tower: return "vision_tower";
        case ParamGroupName::projector_mlp: return "projector_mlp";
        case ParamGroupName::wsi_projector: return "wsi_projector";
        case ParamGroupName::llm_body: return "llm_body";
    }
    throw InputError("unknown parameter group");
}

ParamGroupName param_group_from_string(const std::string& name) {
    if (name == "vision_tower") return ParamGroupName::vision_tower;
    if (name == "projector_mlp") return ParamGroupName::projector_mlp;
    if (name == "wsi_projector") return ParamGroupName::wsi_projector;
    if (name == "llm_body") return ParamGroupName::llm_body;
    throw InputError("unknown parameter group: " + name);
}

const ParamGroup& StagePlan::group(ParamGroupName name) const {
    for (const ParamGroup& g : groups) {
        if (g.name == name) return g;
    }
    throw InputError("stage plan has no group " + to_string(name));
}

std::vector<ParamGroupName> StagePlan::trainable() const {
    std::vector<ParamGroupName> names;
    for (const ParamGroup& g : groups) {
        if (!g.frozen) names.push_back(g.name);
    }
    return names;
}

StagePlan build_stage_plan(int stage) {
    if (stage < 1 || stage > 4) {
        throw InputError("stage must be in 1..4, got " + std::to_string(stage));
    }
    StagePlan plan;
    plan.stage = stage;
    plan.schedule = LrSchedule::cosine;
    plan.groups = {
        {ParamGroupName::vision_tower, 0.0, true},
        {ParamGroupName::projector_mlp, 0.0, true},
        {ParamGroupName::wsi_projector, 0.0, true},
        {ParamGroupName::llm_body, 0.0, true},
    };
    auto set = [&](ParamGroupName name, double lr) {
        for (ParamGroup& g : plan.groups) {
            if (g.name == name) {
                g.frozen = false;
                g.learning_rate = lr;
                return;
            }
        }
    };
    switch (stage) {
        case 1:
            set(ParamGroupName::projector_mlp, 1e-3);
            plan.epochs = 1;
            plan.warmup_ratio = 0.03;
            plan.data_mix = {{"patch_caption", 1.0}};
            break;
        case 2:
            set(ParamGroupName::vision_tower, 2e-6);
            set(ParamGroupName::projector_mlp, 1e-5);
            set(ParamGroupName::llm_body, 1e-5);
            plan.epochs = 1;
            plan.warmup_ratio = 0.03;
            plan.data_mix = {{"patch_instruct", 1.0}};
            break;
        case 3:
            set(ParamGroupName::wsi_projector, 5e-6);
            plan.epochs = 1;
            plan.warmup_ratio = 0.1;
            plan.data_mix = {{"wsi_report", 1.0}};
            break;
        case 4:
            set(ParamGroupName::vision_tower, 2e-6);
            set(ParamGroupName::projector_mlp, 1e-5);
            set(ParamGroupName::wsi_projector, 1e-5);
            set(ParamGroupName::llm_body, 1e-5);
            plan.epochs = 5;
            plan.warmup_ratio = 0.1;
            plan.data_mix = {{"patch_instruct", 0.15}, {"wsi_instruct", 0.85}};
            break;
    }
    return plan;
}

double lr_at(const StagePlan& plan, ParamGroupName group, std::int64_t step,
             std::int64_t total_steps) {
    const ParamGroup& g = plan.group(group);
    if (g.frozen) {
        throw InputError("lr_at: group " + to_string(group) + " is frozen in stage " +
                         std::to_string(plan.stage));
    }
    if (total_steps < 1 || step < 0 || step > total_steps) {
        throw InputError("lr_at: step must lie in [0, total_steps]");
    }
    const double warmup_steps = plan.warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warmup_steps > 0.0 && s < warmup_steps) {
        return g.learning_rate * s / warmup_steps;
    }
    if (step >= total_steps) return 0.0;
    const double progress = (s - warmup_steps) / (static_cast<double>(total_steps) - warmup_steps);
    const double pi = 3.14159265358979323846;
    return g.learning_rate * 0.5 * (1.0 + std::cos(pi * progress));
}

MixSampler::MixSampler(std::uint64_t seed, std::size_t patch_pool, std::size_t wsi_pool,
                       double fraction, MixMode mix_mode)
    : patch_pool_size(patch_pool),
      wsi_pool_size(wsi_pool),
      patch_fraction(fraction),
      mode(mix_mode),
      rng(make_rng(derive_seed(seed, "mix-sampler"))) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw InputError("patch_fraction must lie in [0, 1]");
    }
}

std::vector<std::pair<SampleSource, std::size_t>> sample_mixed_batch(MixSampler& sampler,
                                                                     int batch_size) {
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    std::vector<std::pair<SampleSource, std::size_t>> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));

    auto draw = [&](SampleSource source) {
        std::size_t pool =
            source == SampleSource::patch ? sampler.patch_pool_size : sampler.wsi_pool_size;
        if (pool == 0) {
            throw InputError(std::string("sample_mixed_batch: empty ") +
                             (source == SampleSource::patch ? "patch" : "wsi") + " pool");
        }
        batch.emplace_back(source, next_index(sampler.rng, pool));
    };

    if (sampler.mode == MixMode::bernoulli) {
        for (int i = 0; i < batch_size; ++i) {
            bool patch = next_double(sampler.rng) < sampler.patch_fraction;
            draw(patch ? SampleSource::patch : SampleSource::wsi);
        }
        return batch;
    }

    // quota: fixed patch count per batch, positions shuffled.
    int patch_slots = static_cast<int>(
        std::llround(sampler.patch_fraction * static_cast<double>(batch_size)));
    patch_slots = std::clamp(patch_slots, 0, batch_size);
    std::vector<SampleSource> sources(static_cast<std::size_t>(batch_size), SampleSource::wsi);
    std::fill(sources.begin(), sources.begin() + patch_slots, SampleSource::patch);
    shuffle_vec(sources, sampler.rng);
    for (SampleSource s : sources) draw(s);
    return batch;
}

std::string stage_plan_report_json(const std::vector<StagePlan>& plans) {
    nlohmann::ordered_json report = nlohmann::ordered_json::array();
    for (const StagePlan& plan : plans) {
        nlohmann::ordered_json j;
        j["stage"] = plan.stage;
        j["epochs"] = plan.epochs;
        j["warmup_ratio"] = plan.warmup_ratio;
        j["lr_schedule"] = "cosine";
        nlohmann::ordered_json groups = nlohmann::ordered_json::array();
        for (const ParamGroup& g : plan.groups) {
            nlohmann::ordered_json gj;
            gj["name"] = to_string(g.name);
            gj["frozen"] = g.frozen;
            if (!g.frozen) gj["learning_rate"] = g.learning_rate;
            groups.push_back(gj);
        }
        j["groups"] = groups;
        j["data_mix"] = plan.data_mix;
        report.push_back(j);
    }
    return report.dump(2);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_u64(std::istream& is) {
    std::uint64_t lo = get_u32(is);
    std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

}  // namespace

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open train state for writing: " + path.string());
    put_u32(os, kTrainStateMagic);
    put_u32(os, 1u);
    put_u32(os, static_cast<std::uint32_t>(state.stage));
    put_u64(os, static_cast<std::uint64_t>(state.step));
    put_u32(os, static_cast<std::uint32_t>(state.tensors.size()));
    for (const auto& [name, values] : state.tensors) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, values.size());
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * 4));
    }
    if (!os) throw IoError("short write: " + path.string());
}

TrainState load_train_state(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open train state: " + path.string());
    if (get_u32(is) != kTrainStateMagic) throw IoError("bad train state magic: " + path.string());
    if (get_u32(is) != 1) throw IoError("unsupported train state version: " + path.string());
    TrainState state;
    state.stage = static_cast<int>(get_u32(is));
    state.step = static_cast<std::int64_t>(get_u64(is));
    std::uint32_t count = get_u32(is);
    if (!is) throw IoError("truncated train state: " + path.string());
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint64_t size = get_u64(is);
        std::vector<float> values(size);
        is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size * 4));
        if (!is) throw IoError("truncated train state: " + path.string());
        state.tensors.emplace(std::move(name), std::move(values));
    }
    return state;
}

}  // namespace slidekit
