#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slidekit/matrix.hpp"

namespace slidekit {

/// Matched image/text embedding rows plus the softmax temperature. Rows are
/// L2-normalized inside the loss; callers pass raw embeddings.
struct AlignmentBatch {
    FeatureMatrix image_embeddings;
    FeatureMatrix text_embeddings;
    double temperature = 0.07;
};

struct ContrastiveResult {
    double loss = 0.0;
    FeatureMatrix image_grad;  // w.r.t. the raw (pre-normalization) embeddings
    FeatureMatrix text_grad;
};

/// Symmetric InfoNCE: with S the cosine similarity matrix of matched rows,
/// loss = 0.5 * (CE over rows of S/tau + CE over columns of S/tau) against
/// diagonal targets. Gradients are exact and flow through the row
/// normalization. Requires >= 2 rows and tau > 0.
ContrastiveResult contrastive_loss(const AlignmentBatch& batch);

struct PromptTemplateSet {
    std::vector<std::string> templates;  // each contains exactly one "{}" slot
    std::vector<std::string> class_names;
};

/// The stock template set used for zero-shot prompting.
PromptTemplateSet default_prompt_templates(std::vector<std::string> class_names);

std::string fill_template(const std::string& tmpl, const std::string& class_name);

using TextEncodeFn = std::function<std::vector<double>(const std::string&)>;

/// Seeded token-hash embedding: deterministic stand-in for a text tower.
TextEncodeFn make_stub_text_encoder(std::uint64_t seed, int dim);

struct ZeroShotResult {
    std::vector<int> predictions;
    FeatureMatrix prototypes;  // num_classes x dim, L2-normalized
    std::optional<double> overall_accuracy;
    std::optional<double> balanced_acc;
    std::vector<double> per_class_accuracy;  // empty when labels absent
};

/// Builds one prototype per class (mean of the normalized embeddings of each
/// filled template, re-normalized) and predicts argmax cosine similarity,
/// ties broken toward the lowest class index. Accuracy fields are filled
/// when labels are provided.
ZeroShotResult zero_shot_classify(const FeatureMatrix& image_features,
                                  const PromptTemplateSet& prompts, const TextEncodeFn& encode,
                                  const std::vector<int>* labels = nullptr);

void save_zero_shot_json(const ZeroShotResult& result, const std::vector<std::string>& class_names,
                         const std::filesystem::path& path);

/// N-shot linear-probe protocol: shots per class, seeds, AdamW training of an
/// affine classifier on frozen features, best-epoch test accuracy.
struct ProbeProtocol {
    std::vector<int> shots{2, 8, 16, 32, 64, 128};
    int seeds = 10;
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 1e-2;
    double weight_decay = 0.01;
    std::uint64_t base_seed = 0;
};

struct ProbeRecord {
    int shot = 0;
    int seed = 0;
    double accuracy = 0.0;
};

/// For each (seed, shot): samples shot examples per class without
/// replacement, trains the affine head, and records the best epoch accuracy
/// on the held-out remainder (or on the explicit test split when provided).
/// Records are ordered by shot then seed; identical protocols reproduce
/// identical records.
std::vector<ProbeRecord> linear_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                                      const ProbeProtocol& protocol,
                                      const FeatureMatrix* test_features = nullptr,
                                      const std::vector<int>* test_labels = nullptr);

void save_probe_csv(const std::vector<ProbeRecord>& records, const std::string& dataset,
                    const std::filesystem::path& path);

}  // namespace slidekit
