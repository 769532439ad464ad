#pragma once

#include "moedm/moe/train.hpp"
#include "moedm/toylang/labels.hpp"

namespace moedm::eval {

using nk::Mat;
using nk::Vec;

struct HistogramKl {
    std::vector<double> freq; // normalized selection frequencies
    double kl_uniform = 0.0;
};

// Empirical expert-selection distribution and its divergence from uniform;
// zero-count bins contribute nothing.
inline HistogramKl expert_histogram_kl(std::span<const long> counts) {
    long total = 0;
    for (long c : counts) total += c;
    MOEDM_REQUIRE(total > 0, "expert_histogram_kl: zero total count");
    HistogramKl out;
    out.freq.resize(counts.size());
    double n = static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        double p = static_cast<double>(counts[i]) / static_cast<double>(total);
        out.freq[i] = p;
        if (p > 0.0) out.kl_uniform += p * std::log(n * p);
    }
    return out;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline Vec jacobi_eigenvalues(Mat a) {
    MOEDM_REQUIRE(a.rows == a.cols, "jacobi: matrix must be square");
    int n = a.rows;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(a(p, q)) < 1e-30) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    Vec eig(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = a(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

// Singular values of a rectangular matrix through the smaller Gram matrix.
inline Vec singular_values(const Mat& m) {
    int n = std::min(m.rows, m.cols);
    Mat gram(n, n);
    if (m.cols <= m.rows) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int k = 0; k < m.rows; ++k) s += m(k, i) * m(k, j);
                gram(i, j) = s;
            }
    } else {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) gram(i, j) = nk::dot(m.row(i), m.row(j));
    }
    Vec eig = jacobi_eigenvalues(gram);
    for (auto& v : eig) v = std::sqrt(std::max(v, 0.0));
    return eig;
}

// Hoyer sparsity of a nonnegative vector, in [0, 1]: one nonzero entry gives
// 1, all-equal entries give 0.
inline double hoyer_sparsity(std::span<const double> x) {
    MOEDM_REQUIRE(x.size() >= 2, "hoyer_sparsity: need at least two entries");
    double l1 = 0.0, l2 = 0.0;
    for (double v : x) {
        l1 += std::fabs(v);
        l2 += v * v;
    }
    l2 = std::sqrt(l2);
    if (l2 == 0.0) return 0.0;
    double rootn = std::sqrt(static_cast<double>(x.size()));
    return (rootn - l1 / l2) / (rootn - 1.0);
}

inline double diversity_from_embeddings(const Mat& embeddings) {
    return 1.0 - hoyer_sparsity(singular_values(embeddings));
}

struct DiversityBlock {
    double diversity = 0.0;
    double gram1 = 0.0, gram2 = 0.0, gram3 = 0.0;
    double perplexity = 0.0;
};

// Appendix-style sample metrics over a batch of generated utterances: spectral
// diversity of their embeddings, n-gram uniqueness, and the primitive's
// teacher-forced perplexity on the generating contexts.
inline DiversityBlock diversity_block(const moe::MoeModel& model,
                                      std::span<const std::pair<toy::ConversationHistory, toy::Utterance>> sample) {
    MOEDM_REQUIRE(sample.size() >= 2, "diversity_block: need at least two utterances");
    Mat embeddings(static_cast<int>(sample.size()), model.posterior.frozen_embed.cols);
    std::vector<toy::Utterance> utts;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        Vec e = model.posterior.embed_target(sample[i].second);
        std::copy(e.begin(), e.end(), embeddings.row(static_cast<int>(i)).begin());
        utts.push_back(sample[i].second);
    }
    DiversityBlock out;
    out.diversity = diversity_from_embeddings(embeddings);
    out.gram1 = toy::gram_ratio(1, utts);
    out.gram2 = toy::gram_ratio(2, utts);
    out.gram3 = toy::gram_ratio(3, utts);
    out.perplexity = moe::primitive_perplexity(model, sample);
    return out;
}

} // namespace moedm::eval
