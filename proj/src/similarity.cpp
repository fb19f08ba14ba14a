#include "lexfuse/similarity.hpp"

#include <algorithm>
#include <mutex>
#include <vector>

#include "lexfuse/errors.hpp"
#include "lexfuse/threading.hpp"

namespace lexfuse {

namespace {

Eigen::MatrixXd unit_rows(const EmbeddingSet& set) {
    Eigen::MatrixXd m = set.matrix.cast<double>();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double n = m.row(i).norm();
        if (n != 0.0) m.row(i) /= n;
    }
    return m;
}

// Mean of the k largest values in a row.
double mean_top_k(const Eigen::RowVectorXd& row, int k) {
    std::vector<double> vals(row.data(), row.data() + row.size());
    std::nth_element(vals.begin(), vals.begin() + (k - 1), vals.end(), std::greater<>());
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += vals[static_cast<std::size_t>(i)];
    return sum / k;
}

} // namespace

CslsScorer::CslsScorer(const EmbeddingSet& mapped, const EmbeddingSet& target, int k,
                       std::int64_t block_rows, unsigned threads)
    : k_(k), block_rows_(block_rows > 0 ? block_rows : 1024) {
    if (mapped.dim != target.dim)
        throw validation_error("CSLS requires equal dims, got " + std::to_string(mapped.dim) +
                               " vs " + std::to_string(target.dim));
    const auto n_src = static_cast<std::int64_t>(mapped.size());
    const auto n_tgt = static_cast<std::int64_t>(target.size());
    if (k < 1 || k >= std::min(n_src, n_tgt))
        throw validation_error("CSLS neighborhood k = " + std::to_string(k) +
                               " out of range [1, min(|V_src|, |V_tgt|))");

    source_ = unit_rows(mapped);
    target_ = unit_rows(target);
    r_tgt_.resize(n_src);
    r_src_.resize(n_tgt);

    // One pass over source blocks collects both penalties: each source
    // row's own top-k, and a running per-target top-k across all source
    // rows. The merged per-target candidate multisets are independent of
    // block order, so parallel and serial runs agree bitwise on the mean.
    std::vector<std::vector<double>> tgt_top(static_cast<std::size_t>(n_tgt));
    std::mutex tgt_mutex;

    for_each_block(n_src, block_rows_, threads, [&](std::int64_t b, std::int64_t e) {
        Eigen::MatrixXd cos = source_.middleRows(b, e - b) * target_.transpose();
        for (Eigen::Index r = 0; r < cos.rows(); ++r)
            r_tgt_[b + r] = mean_top_k(cos.row(r), k_);

        // Per-block top-k per target column, merged under a lock.
        std::vector<std::vector<double>> local(static_cast<std::size_t>(n_tgt));
        for (std::int64_t j = 0; j < n_tgt; ++j) {
            auto& heap = local[static_cast<std::size_t>(j)];
            for (Eigen::Index r = 0; r < cos.rows(); ++r) {
                double v = cos(r, j);
                if (static_cast<int>(heap.size()) < k_) {
                    heap.push_back(v);
                    std::push_heap(heap.begin(), heap.end(), std::greater<>());
                } else if (v > heap.front()) {
                    std::pop_heap(heap.begin(), heap.end(), std::greater<>());
                    heap.back() = v;
                    std::push_heap(heap.begin(), heap.end(), std::greater<>());
                }
            }
        }
        std::lock_guard<std::mutex> lock(tgt_mutex);
        for (std::int64_t j = 0; j < n_tgt; ++j) {
            auto& global = tgt_top[static_cast<std::size_t>(j)];
            for (double v : local[static_cast<std::size_t>(j)]) {
                if (static_cast<int>(global.size()) < k_) {
                    global.push_back(v);
                    std::push_heap(global.begin(), global.end(), std::greater<>());
                } else if (v > global.front()) {
                    std::pop_heap(global.begin(), global.end(), std::greater<>());
                    global.back() = v;
                    std::push_heap(global.begin(), global.end(), std::greater<>());
                }
            }
        }
    });

    for (std::int64_t j = 0; j < n_tgt; ++j) {
        const auto& heap = tgt_top[static_cast<std::size_t>(j)];
        // Sum in sorted order for a thread-count-independent reduction.
        std::vector<double> vals(heap.begin(), heap.end());
        std::sort(vals.begin(), vals.end());
        double sum = 0.0;
        for (double v : vals) sum += v;
        r_src_[j] = sum / k_;
    }
}

Eigen::MatrixXd CslsScorer::block(std::int64_t begin, std::int64_t end) const {
    if (begin < 0 || end > rows() || begin > end)
        throw validation_error("similarity block range out of bounds");
    Eigen::MatrixXd scores = 2.0 * (source_.middleRows(begin, end - begin) * target_.transpose());
    scores.colwise() -= r_tgt_.segment(begin, end - begin);
    scores.rowwise() -= r_src_.transpose();
    return scores;
}

} // namespace lexfuse
