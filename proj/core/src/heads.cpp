#include "slidekit/heads.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "slidekit/common.hpp"
#include "slidekit/optim.hpp"
#include "slidekit/rng.hpp"

namespace slidekit {

MILHead make_mil_head(std::uint64_t seed, int in_dim, int num_classes, int attn_dim) {
    if (in_dim < 1 || num_classes < 2 || attn_dim < 1) {
        throw InputError("mil head needs in_dim >= 1, num_classes >= 2, attn_dim >= 1");
    }
    MILHead h;
    h.in_dim = in_dim;
    h.attn_dim = attn_dim;
    h.num_classes = num_classes;
    auto rng = make_rng(derive_seed(seed, "mil-head"));
    h.reduce_w.resize(static_cast<std::size_t>(in_dim) * h.reduced_dim);
    h.reduce_b.assign(static_cast<std::size_t>(h.reduced_dim), 0.0);
    h.attn_v.resize(static_cast<std::size_t>(h.reduced_dim) * attn_dim);
    h.attn_u.resize(static_cast<std::size_t>(h.reduced_dim) * attn_dim);
    h.attn_w.resize(static_cast<std::size_t>(attn_dim));
    // Final classifier starts at zero so early updates dominate the logits.
    h.classify_w.assign(static_cast<std::size_t>(h.reduced_dim) * num_classes, 0.0);
    h.classify_b.assign(static_cast<std::size_t>(num_classes), 0.0);
    for (double& v : h.reduce_w) v = 0.02 * next_normal(rng);
    for (double& v : h.attn_v) v = 0.02 * next_normal(rng);
    for (double& v : h.attn_u) v = 0.02 * next_normal(rng);
    for (double& v : h.attn_w) v = 0.02 * next_normal(rng);
    return h;
}

MILForward mil_forward(const MILHead& head, const FeatureMatrix& bag) {
    if (bag.rows == 0) throw InputError("mil_forward: empty bag");
    if (bag.dim != static_cast<std::size_t>(head.in_dim)) {
        throw ShapeError("mil_forward: bag dim " + std::to_string(bag.dim) +
                         " does not match head in_dim " + std::to_string(head.in_dim));
    }
    const std::size_t n = bag.rows;
    const std::size_t rd = static_cast<std::size_t>(head.reduced_dim);
    const std::size_t ad = static_cast<std::size_t>(head.attn_dim);
    const std::size_t nc = static_cast<std::size_t>(head.num_classes);

    MILForward fwd;
    fwd.bag = bag;
    fwd.reduced.assign(n * rd, 0.0);
    fwd.tanh_gate.assign(n * ad, 0.0);
    fwd.sigm_gate.assign(n * ad, 0.0);

    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto x = bag.row(i);
        double* h = fwd.reduced.data() + i * rd;
        for (std::size_t j = 0; j < rd; ++j) h[j] = head.reduce_b[j];
        for (std::size_t k = 0; k < bag.dim; ++k) {
            double xk = x[k];
            const double* wrow = head.reduce_w.data() + k * rd;
            for (std::size_t j = 0; j < rd; ++j) h[j] += xk * wrow[j];
        }
        double* tg = fwd.tanh_gate.data() + i * ad;
        double* sg = fwd.sigm_gate.data() + i * ad;
        for (std::size_t d = 0; d < ad; ++d) {
            double vt = 0.0, vu = 0.0;
            for (std::size_t j = 0; j < rd; ++j) {
                vt += h[j] * head.attn_v[j * ad + d];
                vu += h[j] * head.attn_u[j * ad + d];
            }
            tg[d] = std::tanh(vt);
            sg[d] = 1.0 / (1.0 + std::exp(-vu));
        }
        double a = 0.0;
        for (std::size_t d = 0; d < ad; ++d) a += head.attn_w[d] * tg[d] * sg[d];
        scores[i] = a;
    }

    double max_s = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    fwd.attention_weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        fwd.attention_weights[i] = std::exp(scores[i] - max_s);
        z += fwd.attention_weights[i];
    }
    for (double& w : fwd.attention_weights) w /= z;

    fwd.pooled.assign(rd, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* h = fwd.reduced.data() + i * rd;
        double w = fwd.attention_weights[i];
        for (std::size_t j = 0; j < rd; ++j) fwd.pooled[j] += w * h[j];
    }

    fwd.class_scores.assign(nc, 0.0);
    for (std::size_t c = 0; c < nc; ++c) fwd.class_scores[c] = head.classify_b[c];
    for (std::size_t j = 0; j < rd; ++j) {
        double pj = fwd.pooled[j];
        const double* wrow = head.classify_w.data() + j * nc;
        for (std::size_t c = 0; c < nc; ++c) fwd.class_scores[c] += pj * wrow[c];
    }
    return fwd;
}

MILGrads mil_backward(const MILHead& head, const MILForward& fwd,
                      const std::vector<double>& score_grad) {
    const std::size_t n = fwd.bag.rows;
    const std::size_t rd = static_cast<std::size_t>(head.reduced_dim);
    const std::size_t ad = static_cast<std::size_t>(head.attn_dim);
    const std::size_t nc = static_cast<std::size_t>(head.num_classes);
    if (score_grad.size() != nc) throw ShapeError("mil_backward: score gradient size mismatch");

    MILGrads g;
    g.reduce_w.assign(head.reduce_w.size(), 0.0);
    g.reduce_b.assign(head.reduce_b.size(), 0.0);
    g.attn_v.assign(head.attn_v.size(), 0.0);
    g.attn_u.assign(head.attn_u.size(), 0.0);
    g.attn_w.assign(head.attn_w.size(), 0.0);
    g.classify_w.assign(head.classify_w.size(), 0.0);
    g.classify_b.assign(head.classify_b.size(), 0.0);
    g.bag_grad = FeatureMatrix(n, fwd.bag.dim, fwd.bag.provenance);

    // classify: scores = pooled * W_c + b_c
    std::vector<double> d_pooled(rd, 0.0);
    for (std::size_t c = 0; c < nc; ++c) g.classify_b[c] += score_grad[c];
    for (std::size_t j = 0; j < rd; ++j) {
        const double* wrow = head.classify_w.data() + j * nc;
        double acc = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
            g.classify_w[j * nc + c] += fwd.pooled[j] * score_grad[c];
            acc += wrow[c] * score_grad[c];
        }
        d_pooled[j] = acc;
    }

    // pooled = sum_i w_i h_i
    std::vector<double> d_weight(n, 0.0);
    std::vector<double> d_reduced(n * rd, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* h = fwd.reduced.data() + i * rd;
        double* dh = d_reduced.data() + i * rd;
        double acc = 0.0;
        double w = fwd.attention_weights[i];
        for (std::size_t j = 0; j < rd; ++j) {
            acc += d_pooled[j] * h[j];
            dh[j] += w * d_pooled[j];
        }
        d_weight[i] = acc;
    }

    // softmax over instance scores
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += d_weight[i] * fwd.attention_weights[i];
    for (std::size_t i = 0; i < n; ++i) {
        double da = fwd.attention_weights[i] * (d_weight[i] - dot);
        // a_i = sum_d attn_w[d] * tanh_d * sigm_d
        const double* tg = fwd.tanh_gate.data() + i * ad;
        const double* sg = fwd.sigm_gate.data() + i * ad;
        const double* h = fwd.reduced.data() + i * rd;
        double* dh = d_reduced.data() + i * rd;
        for (std::size_t d = 0; d < ad; ++d) {
            g.attn_w[d] += da * tg[d] * sg[d];
            double d_tanh_pre = da * head.attn_w[d] * sg[d] * (1.0 - tg[d] * tg[d]);
            double d_sigm_pre = da * head.attn_w[d] * tg[d] * sg[d] * (1.0 - sg[d]);
            for (std::size_t j = 0; j < rd; ++j) {
                g.attn_v[j * ad + d] += h[j] * d_tanh_pre;
                g.attn_u[j * ad + d] += h[j] * d_sigm_pre;
                dh[j] += head.attn_v[j * ad + d] * d_tanh_pre +
                         head.attn_u[j * ad + d] * d_sigm_pre;
            }
        }
    }

    // reduce: h = x * W_r + b_r
    for (std::size_t i = 0; i < n; ++i) {
        auto x = fwd.bag.row(i);
        const double* dh = d_reduced.data() + i * rd;
        auto dx = g.bag_grad.row(i);
        for (std::size_t j = 0; j < rd; ++j) g.reduce_b[j] += dh[j];
        for (std::size_t k = 0; k < fwd.bag.dim; ++k) {
            const double* wrow = head.reduce_w.data() + k * rd;
            double* gwrow = g.reduce_w.data() + k * rd;
            double acc = 0.0;
            for (std::size_t j = 0; j < rd; ++j) {
                gwrow[j] += x[k] * dh[j];
                acc += wrow[j] * dh[j];
            }
            dx[k] = acc;
        }
    }
    return g;
}

namespace {

std::vector<std::span<double>> head_params(MILHead& h) {
    return {h.reduce_w, h.reduce_b, h.attn_v, h.attn_u, h.attn_w, h.classify_w, h.classify_b};
}

std::vector<std::span<const double>> grad_params(const MILGrads& g) {
    return {g.reduce_w, g.reduce_b, g.attn_v, g.attn_u, g.attn_w, g.classify_w, g.classify_b};
}

double validation_balanced_accuracy(const MILHead& head, const std::vector<FeatureMatrix>& bags,
                                    const std::vector<int>& labels) {
    std::vector<int> predictions(bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        MILForward fwd = mil_forward(head, bags[i]);
        int best = 0;
        for (std::size_t c = 1; c < fwd.class_scores.size(); ++c) {
            if (fwd.class_scores[c] > fwd.class_scores[best]) best = static_cast<int>(c);
        }
        predictions[i] = best;
    }
    return balanced_accuracy(predictions, labels);
}

}  // namespace

MILTrainResult mil_train(const MILHead& head, const std::vector<FeatureMatrix>& bags,
                         const std::vector<int>& labels,
                         const std::vector<FeatureMatrix>& val_bags,
                         const std::vector<int>& val_labels, const MILTrainOptions& options) {
    if (bags.size() != labels.size() || bags.empty()) {
        throw ShapeError("mil_train: bags and labels must be nonempty and aligned");
    }
    if (val_bags.size() != val_labels.size() || val_bags.empty()) {
        throw ShapeError("mil_train: validation bags and labels must be nonempty and aligned");
    }
    {
        auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
        if (*lo == *hi) throw InputError("mil_train: training labels contain a single class");
        if (*lo < 0 || *hi >= head.num_classes) {
            throw InputError("mil_train: label outside head class range");
        }
    }

    MILTrainResult result;
    result.final_head = head;
    MILHead& model = result.final_head;

    std::vector<AdamState> adam;
    for (auto span : head_params(model)) adam.emplace_back(span.size());
    AdamConfig cfg;
    cfg.lr = options.learning_rate;
    cfg.weight_decay = 0.0;

    std::vector<std::size_t> order(bags.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = make_rng(derive_seed(options.seed, "mil-train"));

    const std::size_t nc = static_cast<std::size_t>(head.num_classes);
    std::vector<double> score_grad(nc);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        shuffle_vec(order, rng);
        for (std::size_t idx : order) {
            MILForward fwd = mil_forward(model, bags[idx]);
            double max_l = *std::max_element(fwd.class_scores.begin(), fwd.class_scores.end());
            double z = 0.0;
            for (std::size_t c = 0; c < nc; ++c) {
                score_grad[c] = std::exp(fwd.class_scores[c] - max_l);
                z += score_grad[c];
            }
            for (std::size_t c = 0; c < nc; ++c) {
                score_grad[c] = score_grad[c] / z -
                                (static_cast<int>(c) == labels[idx] ? 1.0 : 0.0);
            }
            MILGrads grads = mil_backward(model, fwd, score_grad);
            auto params = head_params(model);
            auto gspans = grad_params(grads);
            for (std::size_t t = 0; t < params.size(); ++t) {
                adam_step(params[t], gspans[t], adam[t], cfg);
            }
        }
        double acc = validation_balanced_accuracy(model, val_bags, val_labels);
        result.val_history.push_back(acc);
        if (acc > result.best_balanced_accuracy || result.best_epoch < 0) {
            result.best_balanced_accuracy = acc;
            result.best_epoch = epoch;
            result.best_head = model;
        }
    }
    return result;
}

MILPrediction mil_predict(const MILHead& head, const FeatureMatrix& bag,
                          const std::string& slide_id) {
    MILForward fwd = mil_forward(head, bag);
    int best = 0;
    for (std::size_t c = 1; c < fwd.class_scores.size(); ++c) {
        if (fwd.class_scores[c] > fwd.class_scores[best]) best = static_cast<int>(c);
    }
    double max_l = *std::max_element(fwd.class_scores.begin(), fwd.class_scores.end());
    double z = 0.0;
    for (double v : fwd.class_scores) z += std::exp(v - max_l);
    MILPrediction p;
    p.slide_id = slide_id;
    p.predicted_class = best;
    p.confidence = std::exp(fwd.class_scores[static_cast<std::size_t>(best)] - max_l) / z;
    return p;
}

void save_mil_predictions_csv(const std::vector<MILPrediction>& predictions,
                              const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write MIL predictions: " + path.string());
    os << "slide_id,predicted_class,confidence\n";
    char conf[64];
    for (const MILPrediction& p : predictions) {
        std::snprintf(conf, sizeof(conf), "%.10g", p.confidence);
        os << p.slide_id << "," << p.predicted_class << "," << conf << "\n";
    }
    if (!os) throw IoError("short write: " + path.string());
}

// ---- text metrics -------------------------------------------------------

std::vector<std::string> tokenize_for_metrics(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
        } else if (!std::ispunct(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (tokens.size() < static_cast<std::size_t>(n)) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::vector<std::string> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
        ++counts[gram];
    }
    return counts;
}

// Clipped matches and candidate n-gram total for one sentence pair set.
void clipped_counts(const std::vector<std::string>& candidate,
                    const std::vector<std::vector<std::string>>& references, int n,
                    std::size_t& matched, std::size_t& total) {
    NgramCounts cand = count_ngrams(candidate, n);
    total = candidate.size() >= static_cast<std::size_t>(n)
                ? candidate.size() - static_cast<std::size_t>(n) + 1
                : 0;
    matched = 0;
    if (cand.empty()) return;
    std::vector<NgramCounts> ref_counts;
    ref_counts.reserve(references.size());
    for (const auto& ref : references) ref_counts.push_back(count_ngrams(ref, n));
    for (const auto& [gram, count] : cand) {
        std::size_t best_ref = 0;
        for (const auto& rc : ref_counts) {
            auto it = rc.find(gram);
            if (it != rc.end()) best_ref = std::max(best_ref, it->second);
        }
        matched += std::min(count, best_ref);
    }
}

// Reference length closest to the candidate length; ties prefer the shorter.
std::size_t closest_ref_length(std::size_t cand_len,
                               const std::vector<std::vector<std::string>>& references) {
    std::size_t best = references.front().size();
    for (const auto& ref : references) {
        auto diff = [&](std::size_t len) {
            return len > cand_len ? len - cand_len : cand_len - len;
        };
        if (diff(ref.size()) < diff(best) || (diff(ref.size()) == diff(best) && ref.size() < best)) {
            best = ref.size();
        }
    }
    return best;
}

std::vector<double> bleu_from_counts(const std::vector<std::size_t>& matched,
                                     const std::vector<std::size_t>& total, std::size_t cand_len,
                                     std::size_t ref_len, int max_n) {
    double bp = 1.0;
    if (cand_len < ref_len) {
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    }
    std::vector<double> scores(static_cast<std::size_t>(max_n), 0.0);
    for (int n = 1; n <= max_n; ++n) {
        double log_sum = 0.0;
        bool zero = false;
        for (int k = 1; k <= n; ++k) {
            std::size_t m = matched[static_cast<std::size_t>(k - 1)];
            std::size_t t = total[static_cast<std::size_t>(k - 1)];
            if (m == 0 || t == 0) {
                zero = true;
                break;
            }
            log_sum += std::log(static_cast<double>(m) / static_cast<double>(t));
        }
        scores[static_cast<std::size_t>(n - 1)] =
            zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
    }
    return scores;
}

}  // namespace

std::vector<double> bleu(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references, int max_n) {
    if (max_n < 1 || max_n > 4) throw InputError("bleu: max_n must be in 1..4");
    if (candidate.empty()) throw InputError("bleu: empty candidate");
    if (references.empty()) throw InputError("bleu: empty reference set");

    std::vector<std::size_t> matched(static_cast<std::size_t>(max_n), 0);
    std::vector<std::size_t> total(static_cast<std::size_t>(max_n), 0);
    for (int n = 1; n <= max_n; ++n) {
        clipped_counts(candidate, references, n, matched[static_cast<std::size_t>(n - 1)],
                       total[static_cast<std::size_t>(n - 1)]);
    }
    return bleu_from_counts(matched, total, candidate.size(),
                            closest_ref_length(candidate.size(), references), max_n);
}

std::vector<double> corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                                const std::vector<std::vector<std::vector<std::string>>>& references,
                                int max_n) {
    if (max_n < 1 || max_n > 4) throw InputError("corpus_bleu: max_n must be in 1..4");
    if (candidates.empty() || candidates.size() != references.size()) {
        throw ShapeError("corpus_bleu: candidates and references must be nonempty and aligned");
    }
    std::vector<std::size_t> matched(static_cast<std::size_t>(max_n), 0);
    std::vector<std::size_t> total(static_cast<std::size_t>(max_n), 0);
    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].empty()) throw InputError("corpus_bleu: empty candidate line");
        if (references[i].empty()) throw InputError("corpus_bleu: empty reference set");
        for (int n = 1; n <= max_n; ++n) {
            std::size_t m = 0, t = 0;
            clipped_counts(candidates[i], references[i], n, m, t);
            matched[static_cast<std::size_t>(n - 1)] += m;
            total[static_cast<std::size_t>(n - 1)] += t;
        }
        cand_len += candidates[i].size();
        ref_len += closest_ref_length(candidates[i].size(), references[i]);
    }
    return bleu_from_counts(matched, total, cand_len, ref_len, max_n);
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference, double beta) {
    if (candidate.empty() || reference.empty()) throw InputError("rouge_l: empty input");
    const std::size_t n = candidate.size();
    const std::size_t m = reference.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                          : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    if (lcs == 0.0) return 0.0;
    const double recall = lcs / static_cast<double>(m);
    const double precision = lcs / static_cast<double>(n);
    const double b2 = beta * beta;
    return (1.0 + b2) * recall * precision / (recall + b2 * precision);
}

TextMetricReport evaluate_reports(const std::vector<std::string>& candidate_lines,
                                  const std::vector<std::string>& reference_lines) {
    if (candidate_lines.empty() || candidate_lines.size() != reference_lines.size()) {
        throw ShapeError("evaluate_reports: candidate and reference line counts must match");
    }
    std::vector<std::vector<std::string>> cands;
    std::vector<std::vector<std::vector<std::string>>> refs;
    double rouge_sum = 0.0;
    for (std::size_t i = 0; i < candidate_lines.size(); ++i) {
        auto cand = tokenize_for_metrics(candidate_lines[i]);
        auto ref = tokenize_for_metrics(reference_lines[i]);
        if (cand.empty() || ref.empty()) {
            throw InputError("evaluate_reports: line " + std::to_string(i + 1) +
                             " tokenizes to nothing");
        }
        rouge_sum += rouge_l(cand, ref);
        cands.push_back(std::move(cand));
        refs.push_back({std::move(ref)});
    }
    std::vector<double> b = corpus_bleu(cands, refs, 4);
    TextMetricReport report;
    report.bleu1 = b[0];
    report.bleu2 = b[1];
    report.bleu3 = b[2];
    report.bleu4 = b[3];
    report.rouge_l = rouge_sum / static_cast<double>(candidate_lines.size());
    return report;
}

void save_metric_report_json(const TextMetricReport& report, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["bleu1"] = report.bleu1;
    j["bleu2"] = report.bleu2;
    j["bleu3"] = report.bleu3;
    j["bleu4"] = report.bleu4;
    j["rouge_l"] = report.rouge_l;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write metric report: " + path.string());
    os << j.dump(2) << "\n";
}

}  // namespace slidekit
