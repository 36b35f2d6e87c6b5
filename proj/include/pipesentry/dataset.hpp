// Synthetic training tasks small enough to train in seconds yet hard enough
// that poisoned updates visibly wreck the loss curve.
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pipesentry/random.hpp"
#include "pipesentry/tensor.hpp"

namespace pipesentry {

struct Dataset {
    std::string task;
    Tensor inputs;  // samples x input_dim
    std::vector<int> labels;
    int classes = 0;

    Dataset() : inputs(1, 1) {}
    int size() const { return inputs.rows(); }
};

// Balanced Gaussian blobs: class centers ~ N(0, 4I), samples = center + N(0, I).
// Classes are assigned round-robin so every class count is exact.
inline Dataset gauss_classify(int classes, int input_dim, int samples, RandomStream& stream) {
    if (classes < 2) throw ConfigError("gauss_classify needs >= 2 classes");
    if (samples < classes) throw ConfigError("gauss_classify needs >= 1 sample per class");
    Tensor centers(classes, input_dim);
    for (double& v : centers.data()) v = 2.0 * stream.normal();
    Dataset d;
    d.task = "gauss_classify";
    d.classes = classes;
    d.inputs = Tensor(samples, input_dim);
    d.labels.resize(static_cast<size_t>(samples));
    for (int s = 0; s < samples; ++s) {
        const int cls = s % classes;
        d.labels[static_cast<size_t>(s)] = cls;
        for (int j = 0; j < input_dim; ++j)
            d.inputs.at(s, j) = centers.at(cls, j) + stream.normal();
    }
    return d;
}

// Character bigram prediction over a bundled plain-text corpus.
// Fixed 28-symbol vocabulary: 'a'..'z', space, and '.' (sentence stop).
inline constexpr int kCharVocab = 28;

inline int char_class(char c) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c == '.' || c == '!' || c == '?' || c == ';' || c == ':') return 27;
    return 26;  // everything else reads as a space
}

inline Dataset char_lm(const std::string& text, int samples) {
    if (text.size() < 2) throw ConfigError("char_lm corpus must have at least 2 characters");
    if (samples < 1) throw ConfigError("char_lm needs >= 1 sample");
    Dataset d;
    d.task = "char_lm";
    d.classes = kCharVocab;
    d.inputs = Tensor(samples, kCharVocab);
    d.labels.resize(static_cast<size_t>(samples));
    const size_t pairs = text.size() - 1;
    for (int s = 0; s < samples; ++s) {
        const size_t p = static_cast<size_t>(s) % pairs;
        d.inputs.at(s, char_class(text[p])) = 1.0;
        d.labels[static_cast<size_t>(s)] = char_class(text[p + 1]);
    }
    return d;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read corpus file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Deterministic batch for an iteration: rows (it*B + j) mod n, so restarting
// an iteration replays exactly the same rows.
struct Batch {
    Tensor inputs;
    std::vector<int> labels;
    Batch() : inputs(1, 1) {}
};

inline Batch batch_for_iteration(const Dataset& d, int iteration, int batch_size) {
    Batch b;
    b.inputs = Tensor(batch_size, d.inputs.cols());
    b.labels.resize(static_cast<size_t>(batch_size));
    const long long n = d.size();
    for (int j = 0; j < batch_size; ++j) {
        const long long r =
            (static_cast<long long>(iteration) * batch_size + j) % n;
        for (int c = 0; c < d.inputs.cols(); ++c)
            b.inputs.at(j, c) = d.inputs.at(static_cast<int>(r), c);
        b.labels[static_cast<size_t>(j)] = d.labels[static_cast<size_t>(r)];
    }
    return b;
}

}  // namespace pipesentry
