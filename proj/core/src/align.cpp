#include "slidekit/align.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "slidekit/common.hpp"
#include "slidekit/optim.hpp"
#include "slidekit/rng.hpp"

namespace slidekit {

namespace {

// Row-normalized copy; norms returned for the gradient chain rule.
FeatureMatrix l2_normalize_rows(const FeatureMatrix& m, std::vector<double>& norms,
                                const char* what) {
    FeatureMatrix out = m;
    norms.resize(m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = out.row(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        double norm = std::sqrt(sq);
        if (!(norm > 0.0)) {
            throw NumericError(std::string(what) + ": zero-norm embedding row " + std::to_string(r));
        }
        norms[r] = norm;
        for (double& v : row) v /= norm;
    }
    return out;
}

// dL/dx from dL/du where u = x / |x|.
void denormalize_grad(const FeatureMatrix& normalized, const std::vector<double>& norms,
                      FeatureMatrix& grad) {
    for (std::size_t r = 0; r < grad.rows; ++r) {
        auto u = normalized.row(r);
        auto g = grad.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < grad.dim; ++c) dot += g[c] * u[c];
        for (std::size_t c = 0; c < grad.dim; ++c) g[c] = (g[c] - dot * u[c]) / norms[r];
    }
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct AffineHead {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<double> params;  // W (dim x classes) then b (classes)

    double* w() { return params.data(); }
    double* b() { return params.data() + dim * classes; }
    const double* w() const { return params.data(); }
    const double* b() const { return params.data() + dim * classes; }

    void logits(std::span<const double> x, std::vector<double>& out) const {
        out.assign(classes, 0.0);
        for (std::size_t c = 0; c < classes; ++c) out[c] = b()[c];
        for (std::size_t i = 0; i < dim; ++i) {
            double xi = x[i];
            const double* wrow = w() + i * classes;
            for (std::size_t c = 0; c < classes; ++c) out[c] += xi * wrow[c];
        }
    }
};

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = static_cast<int>(i);
    }
    return best;
}

double head_accuracy(const AffineHead& head, const FeatureMatrix& features,
                     const std::vector<int>& labels, const std::vector<std::size_t>& indices) {
    std::vector<double> logits;
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        head.logits(features.row(idx), logits);
        if (argmax_lowest(logits) == labels[idx]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace

ContrastiveResult contrastive_loss(const AlignmentBatch& batch) {
    const FeatureMatrix& img = batch.image_embeddings;
    const FeatureMatrix& txt = batch.text_embeddings;
    if (!(batch.temperature > 0.0)) throw InputError("contrastive temperature must be positive");
    if (img.rows != txt.rows || img.dim != txt.dim) {
        throw ShapeError("contrastive batch: image and text shapes must match");
    }
    if (img.rows < 2) throw InputError("contrastive batch needs at least 2 rows");

    const std::size_t b = img.rows;
    const std::size_t d = img.dim;
    const double inv_tau = 1.0 / batch.temperature;

    std::vector<double> img_norms, txt_norms;
    FeatureMatrix u = l2_normalize_rows(img, img_norms, "contrastive_loss/image");
    FeatureMatrix t = l2_normalize_rows(txt, txt_norms, "contrastive_loss/text");

    // logits[i][j] = <u_i, t_j> / tau
    std::vector<double> logits(b * b);
    for (std::size_t i = 0; i < b; ++i) {
        auto ui = u.row(i);
        for (std::size_t j = 0; j < b; ++j) {
            auto tj = t.row(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += ui[c] * tj[c];
            logits[i * b + j] = dot * inv_tau;
        }
    }

    // dL/dlogits accumulates 0.5/B * (row softmax - I) + 0.5/B * (col softmax - I).
    std::vector<double> dlogits(b * b, 0.0);
    double loss = 0.0;
    const double half_inv_b = 0.5 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        double max_l = logits[i * b];
        for (std::size_t j = 1; j < b; ++j) max_l = std::max(max_l, logits[i * b + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < b; ++j) z += std::exp(logits[i * b + j] - max_l);
        double lse = max_l + std::log(z);
        loss += half_inv_b * (lse - logits[i * b + i]);
        for (std::size_t j = 0; j < b; ++j) {
            double p = std::exp(logits[i * b + j] - lse);
            dlogits[i * b + j] += half_inv_b * (p - (i == j ? 1.0 : 0.0));
        }
    }
    for (std::size_t j = 0; j < b; ++j) {
        double max_l = logits[j];
        for (std::size_t i = 1; i < b; ++i) max_l = std::max(max_l, logits[i * b + j]);
        double z = 0.0;
        for (std::size_t i = 0; i < b; ++i) z += std::exp(logits[i * b + j] - max_l);
        double lse = max_l + std::log(z);
        loss += half_inv_b * (lse - logits[j * b + j]);
        for (std::size_t i = 0; i < b; ++i) {
            double p = std::exp(logits[i * b + j] - lse);
            dlogits[i * b + j] += half_inv_b * (p - (i == j ? 1.0 : 0.0));
        }
    }

    ContrastiveResult result;
    result.loss = loss;
    result.image_grad = FeatureMatrix(b, d, img.provenance);
    result.text_grad = FeatureMatrix(b, d, txt.provenance);
    for (std::size_t i = 0; i < b; ++i) {
        auto gi = result.image_grad.row(i);
        for (std::size_t j = 0; j < b; ++j) {
            double w = dlogits[i * b + j] * inv_tau;
            if (w == 0.0) continue;
            auto tj = t.row(j);
            for (std::size_t c = 0; c < d; ++c) gi[c] += w * tj[c];
        }
    }
    for (std::size_t j = 0; j < b; ++j) {
        auto gj = result.text_grad.row(j);
        for (std::size_t i = 0; i < b; ++i) {
            double w = dlogits[i * b + j] * inv_tau;
            if (w == 0.0) continue;
            auto ui = u.row(i);
            for (std::size_t c = 0; c < d; ++c) gj[c] += w * ui[c];
        }
    }
    denormalize_grad(u, img_norms, result.image_grad);
    denormalize_grad(t, txt_norms, result.text_grad);
    return result;
}

PromptTemplateSet default_prompt_templates(std::vector<std::string> class_names) {
    PromptTemplateSet set;
    set.templates = {"An H&E image of {}", "This is an image of {} presented in the image",
                     "An H&E patch of {}"};
    set.class_names = std::move(class_names);
    return set;
}

std::string fill_template(const std::string& tmpl, const std::string& class_name) {
    auto pos = tmpl.find("{}");
    if (pos == std::string::npos || tmpl.find("{}", pos + 2) != std::string::npos) {
        throw InputError("prompt template must contain exactly one {} slot: " + tmpl);
    }
    std::string out = tmpl;
    out.replace(pos, 2, class_name);
    return out;
}

TextEncodeFn make_stub_text_encoder(std::uint64_t seed, int dim) {
    if (dim < 1) throw InputError("text encoder dim must be >= 1");
    return [seed, dim](const std::string& text) {
        std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
        for (const std::string& token : whitespace_tokens(text)) {
            auto rng = make_rng(splitmix64(seed ^ fnv1a(token)));
            for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i)] += next_normal(rng);
        }
        return out;
    };
}

ZeroShotResult zero_shot_classify(const FeatureMatrix& image_features,
                                  const PromptTemplateSet& prompts, const TextEncodeFn& encode,
                                  const std::vector<int>* labels) {
    if (prompts.class_names.empty()) throw InputError("zero_shot_classify: empty class list");
    if (prompts.templates.empty()) throw InputError("zero_shot_classify: empty template list");
    if (labels && labels->size() != image_features.rows) {
        throw ShapeError("zero_shot_classify: labels length must match image rows");
    }

    const std::size_t num_classes = prompts.class_names.size();
    const std::size_t dim = image_features.dim;

    ZeroShotResult result;
    result.prototypes = FeatureMatrix(num_classes, dim, Provenance::text);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto proto = result.prototypes.row(c);
        for (const std::string& tmpl : prompts.templates) {
            std::vector<double> emb = encode(fill_template(tmpl, prompts.class_names[c]));
            if (emb.size() != dim) {
                throw ShapeError("text encoder dim " + std::to_string(emb.size()) +
                                 " does not match image dim " + std::to_string(dim));
            }
            double sq = 0.0;
            for (double v : emb) sq += v * v;
            double norm = std::sqrt(sq);
            if (!(norm > 0.0)) {
                throw NumericError("zero-norm template embedding for class " +
                                   prompts.class_names[c]);
            }
            for (std::size_t i = 0; i < dim; ++i) proto[i] += emb[i] / norm;
        }
        double sq = 0.0;
        for (double v : proto) sq += v * v;
        double norm = std::sqrt(sq);
        if (!(norm > 0.0)) {
            throw NumericError("zero-norm prototype for class " + prompts.class_names[c]);
        }
        for (double& v : proto) v /= norm;
    }

    result.predictions.resize(image_features.rows);
    for (std::size_t r = 0; r < image_features.rows; ++r) {
        auto x = image_features.row(r);
        double sq = 0.0;
        for (double v : x) sq += v * v;
        double norm = std::sqrt(sq);
        if (!(norm > 0.0)) throw NumericError("zero-norm image embedding row " + std::to_string(r));
        int best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < num_classes; ++c) {
            auto proto = result.prototypes.row(c);
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += x[i] * proto[i];
            double sim = dot / norm;
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(c);
            }
        }
        result.predictions[r] = best;
    }

    if (labels) {
        result.overall_accuracy = plain_accuracy(result.predictions, *labels);
        result.balanced_acc = balanced_accuracy(result.predictions, *labels);
        result.per_class_accuracy.assign(num_classes, 0.0);
        std::vector<std::size_t> totals(num_classes, 0);
        for (std::size_t r = 0; r < labels->size(); ++r) {
            int y = (*labels)[r];
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw InputError("zero_shot_classify: label out of class range");
            }
            ++totals[static_cast<std::size_t>(y)];
            if (result.predictions[r] == y) {
                result.per_class_accuracy[static_cast<std::size_t>(y)] += 1.0;
            }
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (totals[c] > 0) result.per_class_accuracy[c] /= static_cast<double>(totals[c]);
        }
    }
    return result;
}

void save_zero_shot_json(const ZeroShotResult& result, const std::vector<std::string>& class_names,
                         const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["class_names"] = class_names;
    if (result.overall_accuracy) {
        j["overall_accuracy"] = *result.overall_accuracy;
        j["balanced_accuracy"] = *result.balanced_acc;
        j["per_class_accuracy"] = result.per_class_accuracy;
    } else {
        j["overall_accuracy"] = nullptr;
        j["balanced_accuracy"] = nullptr;
        j["per_class_accuracy"] = nlohmann::json::array();
    }
    j["predictions"] = result.predictions;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write zero-shot result: " + path.string());
    os << j.dump(2) << "\n";
}

std::vector<ProbeRecord> linear_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                                      const ProbeProtocol& protocol,
                                      const FeatureMatrix* test_features,
                                      const std::vector<int>* test_labels) {
    if (features.rows != labels.size() || features.rows == 0) {
        throw ShapeError("linear_probe: features and labels must be nonempty and aligned");
    }
    if (protocol.seeds < 1) throw InputError("linear_probe: seeds must be >= 1");
    if (protocol.shots.empty() || !std::is_sorted(protocol.shots.begin(), protocol.shots.end())) {
        throw InputError("linear_probe: shots must be nonempty and ascending");
    }
    if ((test_features == nullptr) != (test_labels == nullptr)) {
        throw InputError("linear_probe: test features and labels must be passed together");
    }

    // Map arbitrary label values onto dense class indices.
    std::vector<int> classes(labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 2) throw InputError("linear_probe needs at least 2 classes");
    auto class_index = [&](int label) {
        auto it = std::lower_bound(classes.begin(), classes.end(), label);
        if (it == classes.end() || *it != label) throw InputError("linear_probe: unseen label");
        return static_cast<int>(it - classes.begin());
    };
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = class_index(labels[i]);

    std::vector<std::vector<std::size_t>> pool(classes.size());
    for (std::size_t i = 0; i < y.size(); ++i) pool[static_cast<std::size_t>(y[i])].push_back(i);
    const int max_shot = protocol.shots.back();
    for (std::size_t c = 0; c < pool.size(); ++c) {
        if (pool[c].size() < static_cast<std::size_t>(max_shot) + (test_features ? 0 : 1)) {
            throw InputError("linear_probe: class " + std::to_string(classes[c]) +
                             " has too few samples for " + std::to_string(max_shot) + " shots");
        }
    }

    std::vector<int> y_test;
    if (test_labels) {
        if (test_features->rows != test_labels->size() || test_features->rows == 0) {
            throw ShapeError("linear_probe: test features and labels must be nonempty and aligned");
        }
        y_test.resize(test_labels->size());
        for (std::size_t i = 0; i < test_labels->size(); ++i) {
            y_test[i] = class_index((*test_labels)[i]);
        }
    }

    std::vector<ProbeRecord> records;
    records.reserve(protocol.shots.size() * static_cast<std::size_t>(protocol.seeds));
    std::vector<double> logits, probs, grads;

    for (int shot : protocol.shots) {
        for (int seed = 0; seed < protocol.seeds; ++seed) {
            auto rng = make_rng(derive_seed(protocol.base_seed,
                                            "probe-shot" + std::to_string(shot) + "-seed" +
                                                std::to_string(seed)));
            // Per-class sample without replacement.
            std::vector<std::size_t> train_idx;
            std::vector<std::uint8_t> in_train(features.rows, 0);
            for (auto& class_pool : pool) {
                std::vector<std::size_t> shuffled(class_pool);
                shuffle_vec(shuffled, rng);
                for (int k = 0; k < shot; ++k) {
                    train_idx.push_back(shuffled[static_cast<std::size_t>(k)]);
                    in_train[shuffled[static_cast<std::size_t>(k)]] = 1;
                }
            }

            const FeatureMatrix* eval_features = test_features ? test_features : &features;
            const std::vector<int>* eval_labels = test_labels ? &y_test : &y;
            std::vector<std::size_t> eval_idx;
            if (test_features) {
                eval_idx.resize(test_features->rows);
                for (std::size_t i = 0; i < eval_idx.size(); ++i) eval_idx[i] = i;
            } else {
                for (std::size_t i = 0; i < features.rows; ++i) {
                    if (!in_train[i]) eval_idx.push_back(i);
                }
            }

            AffineHead head;
            head.dim = features.dim;
            head.classes = classes.size();
            head.params.assign(head.dim * head.classes + head.classes, 0.0);
            AdamState adam(head.params.size());
            AdamConfig adam_cfg;
            adam_cfg.lr = protocol.learning_rate;
            adam_cfg.weight_decay = protocol.weight_decay;
            adam_cfg.decoupled_weight_decay = true;

            double best_accuracy = 0.0;
            for (int epoch = 0; epoch < protocol.epochs; ++epoch) {
                shuffle_vec(train_idx, rng);
                for (std::size_t start = 0; start < train_idx.size();
                     start += static_cast<std::size_t>(protocol.batch_size)) {
                    std::size_t end = std::min(train_idx.size(),
                                               start + static_cast<std::size_t>(protocol.batch_size));
                    grads.assign(head.params.size(), 0.0);
                    double inv_batch = 1.0 / static_cast<double>(end - start);
                    for (std::size_t k = start; k < end; ++k) {
                        std::size_t idx = train_idx[k];
                        auto x = features.row(idx);
                        head.logits(x, logits);
                        double max_l = *std::max_element(logits.begin(), logits.end());
                        double z = 0.0;
                        probs.assign(head.classes, 0.0);
                        for (std::size_t c = 0; c < head.classes; ++c) {
                            probs[c] = std::exp(logits[c] - max_l);
                            z += probs[c];
                        }
                        for (std::size_t c = 0; c < head.classes; ++c) {
                            double delta = probs[c] / z -
                                           (static_cast<int>(c) == y[idx] ? 1.0 : 0.0);
                            delta *= inv_batch;
                            grads[head.dim * head.classes + c] += delta;
                            for (std::size_t i = 0; i < head.dim; ++i) {
                                grads[i * head.classes + c] += delta * x[i];
                            }
                        }
                    }
                    adam_step(head.params, grads, adam, adam_cfg);
                }
                best_accuracy = std::max(
                    best_accuracy, head_accuracy(head, *eval_features, *eval_labels, eval_idx));
            }
            records.push_back({shot, seed, best_accuracy});
        }
    }
    return records;
}

void save_probe_csv(const std::vector<ProbeRecord>& records, const std::string& dataset,
                    const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write probe CSV: " + path.string());
    os << "dataset,shot,seed,accuracy\n";
    char acc[64];
    for (const ProbeRecord& r : records) {
        std::snprintf(acc, sizeof(acc), "%.10g", r.accuracy);
        os << dataset << "," << r.shot << "," << r.seed << "," << acc << "\n";
    }
    if (!os) throw IoError("short write: " + path.string());
}

}  // namespace slidekit
