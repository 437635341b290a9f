#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slidekit/matrix.hpp"

namespace slidekit {

/// Gated-attention MIL head: reduce instances to 256 dims, score each with a
/// tanh/sigmoid gated attention network, softmax the scores over the bag,
/// classify the attention-weighted pooled feature.
struct MILHead {
    int in_dim = 0;
    int reduced_dim = 256;
    int attn_dim = 128;
    int num_classes = 0;

    std::vector<double> reduce_w, reduce_b;      // in x 256, 256
    std::vector<double> attn_v, attn_u;          // 256 x attn_dim each
    std::vector<double> attn_w;                  // attn_dim
    std::vector<double> classify_w, classify_b;  // 256 x C, C
};

MILHead make_mil_head(std::uint64_t seed, int in_dim, int num_classes, int attn_dim = 128);

struct MILForward {
    std::vector<double> class_scores;       // num_classes logits
    std::vector<double> attention_weights;  // N, nonnegative, sums to 1
    // backward intermediates
    FeatureMatrix bag;
    std::vector<double> reduced;     // N x 256
    std::vector<double> tanh_gate;   // N x attn_dim
    std::vector<double> sigm_gate;   // N x attn_dim
    std::vector<double> pooled;      // 256
};

MILForward mil_forward(const MILHead& head, const FeatureMatrix& bag);

struct MILGrads {
    std::vector<double> reduce_w, reduce_b;
    std::vector<double> attn_v, attn_u, attn_w;
    std::vector<double> classify_w, classify_b;
    FeatureMatrix bag_grad;
};

MILGrads mil_backward(const MILHead& head, const MILForward& fwd,
                      const std::vector<double>& score_grad);

struct MILTrainOptions {
    int epochs = 20;
    double learning_rate = 1e-5;
    int batch_size = 1;
    std::uint64_t seed = 0;
};

struct MILTrainResult {
    MILHead final_head;
    MILHead best_head;
    int best_epoch = -1;
    double best_balanced_accuracy = 0.0;
    std::vector<double> val_history;  // balanced accuracy per epoch
};

/// Adam without weight decay, fixed learning rate, bag-at-a-time updates,
/// softmax cross-entropy loss. Tracks the checkpoint with the best validation
/// balanced accuracy across epochs.
MILTrainResult mil_train(const MILHead& head, const std::vector<FeatureMatrix>& bags,
                         const std::vector<int>& labels,
                         const std::vector<FeatureMatrix>& val_bags,
                         const std::vector<int>& val_labels, const MILTrainOptions& options);

struct MILPrediction {
    std::string slide_id;
    int predicted_class = 0;
    double confidence = 0.0;  // softmax probability of the predicted class
};

MILPrediction mil_predict(const MILHead& head, const FeatureMatrix& bag,
                          const std::string& slide_id);

void save_mil_predictions_csv(const std::vector<MILPrediction>& predictions,
                              const std::filesystem::path& path);

// ---- text metrics -------------------------------------------------------

/// Lowercases, strips punctuation characters, splits on whitespace.
std::vector<std::string> tokenize_for_metrics(const std::string& text);

/// Cumulative BLEU-1..max_n for one candidate against one or more references:
/// clipped n-gram precision with brevity penalty, each score scaled to
/// [0, 100]. A missing n-gram order yields 0 at that and higher orders.
std::vector<double> bleu(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references, int max_n = 4);

/// Corpus-level BLEU over aligned candidate/reference-set pairs.
std::vector<double> corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                                const std::vector<std::vector<std::vector<std::string>>>& references,
                                int max_n = 4);

/// LCS F-measure in [0, 1] with recall weight beta (standard 1.2).
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta = 1.2);

struct TextMetricReport {
    double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;  // [0, 100]
    double rouge_l = 0.0;                                        // [0, 1]
};

/// Corpus BLEU plus mean per-line ROUGE-L over parallel candidate and
/// reference line lists.
TextMetricReport evaluate_reports(const std::vector<std::string>& candidate_lines,
                                  const std::vector<std::string>& reference_lines);

void save_metric_report_json(const TextMetricReport& report, const std::filesystem::path& path);

}  // namespace slidekit
