#include "slidekit/common.hpp"

#include <map>

namespace slidekit {

double plain_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || labels.empty()) {
        throw ShapeError("accuracy: predictions and labels must be nonempty and equal-length");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || labels.empty()) {
        throw ShapeError("accuracy: predictions and labels must be nonempty and equal-length");
    }
    std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> {correct, total}
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& [correct, total] = per_class[labels[i]];
        ++total;
        if (predictions[i] == labels[i]) ++correct;
    }
    double sum = 0.0;
    for (const auto& [label, counts] : per_class) {
        sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return sum / static_cast<double>(per_class.size());
}

}  // namespace slidekit
