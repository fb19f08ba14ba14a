#include "lexfuse/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>

#include "lexfuse/binio.hpp"
#include "lexfuse/errors.hpp"
#include "lexfuse/threading.hpp"

namespace lexfuse {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_digest(std::ostream& out, const Digest& d) {
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size()));
}

Digest read_digest(std::istream& in, const char* what) {
    Digest d;
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size()));
    if (!in) throw io_error(std::string("truncated file while reading ") + what);
    return d;
}

} // namespace

void NoiseConfig::validate() const {
    if (t < 1) throw validation_error("noise config: t must be >= 1, got " + std::to_string(t));
    if (!std::isfinite(threshold)) throw validation_error("noise config: threshold must be finite");
    if (!(sigma >= 0.0)) throw validation_error("noise config: sigma must be >= 0");
    if (c < 1) throw validation_error("noise config: c must be >= 1, got " + std::to_string(c));
}

std::span<const MappingEntry> SparseMapping::row_entries(std::int64_t row) const {
    if (row < 0 || row >= rows || row_ptr_.size() != static_cast<std::size_t>(rows) + 1)
        return {};
    auto begin = static_cast<std::size_t>(row_ptr_[static_cast<std::size_t>(row)]);
    auto end = static_cast<std::size_t>(row_ptr_[static_cast<std::size_t>(row) + 1]);
    return {entries.data() + begin, end - begin};
}

std::size_t SparseMapping::count_kind(RowKind kind) const {
    return static_cast<std::size_t>(std::count(row_kind.begin(), row_kind.end(), kind));
}

void SparseMapping::rebuild_row_index() {
    row_ptr_.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (const auto& e : entries) ++row_ptr_[e.row + 1];
    for (std::size_t i = 1; i < row_ptr_.size(); ++i) row_ptr_[i] += row_ptr_[i - 1];

    for (std::int64_t r = 0; r < rows; ++r) {
        auto begin = static_cast<std::size_t>(row_ptr_[static_cast<std::size_t>(r)]);
        auto end = static_cast<std::size_t>(row_ptr_[static_cast<std::size_t>(r) + 1]);
        if (begin == end) continue;
        if (config.row_normalize) {
            double sum = 0.0;
            for (std::size_t k = begin; k < end; ++k) sum += static_cast<double>(entries[k].score);
            for (std::size_t k = begin; k < end; ++k)
                entries[k].weight = static_cast<double>(entries[k].score) / sum;
        } else {
            for (std::size_t k = begin; k < end; ++k)
                entries[k].weight = static_cast<double>(entries[k].score);
        }
    }
}

void SparseMapping::validate() const {
    config.validate();
    if (rows < 0 || cols < 0) throw validation_error("mapping has negative shape");
    if (row_kind.size() != static_cast<std::size_t>(rows))
        throw validation_error("mapping row_kind length does not match row count");

    std::int64_t prev_row = -1, prev_col = -1;
    std::int64_t run = 0;
    for (const auto& e : entries) {
        if (e.row >= rows || e.col >= cols)
            throw validation_error("mapping entry (" + std::to_string(e.row) + ", " +
                                   std::to_string(e.col) + ") out of bounds");
        bool same_row = static_cast<std::int64_t>(e.row) == prev_row;
        if (static_cast<std::int64_t>(e.row) < prev_row ||
            (same_row && static_cast<std::int64_t>(e.col) <= prev_col))
            throw validation_error("mapping entries are not sorted by (row, col)");
        run = same_row ? run + 1 : 1;
        if (run > config.t)
            throw validation_error("row " + std::to_string(e.row) + " has more than t = " +
                                   std::to_string(config.t) + " entries");
        if (!(e.weight > 0.0))
            throw validation_error("non-positive weight at (" + std::to_string(e.row) + ", " +
                                   std::to_string(e.col) + ")");
        if (row_kind[e.row] != RowKind::aligned)
            throw validation_error("dropped row " + std::to_string(e.row) + " has entries");
        prev_row = static_cast<std::int64_t>(e.row);
        prev_col = static_cast<std::int64_t>(e.col);
    }

    if (config.row_normalize) {
        std::size_t k = 0;
        while (k < entries.size()) {
            std::size_t end = k;
            double sum = 0.0;
            while (end < entries.size() && entries[end].row == entries[k].row) sum += entries[end++].weight;
            if (std::abs(sum - 1.0) > 1e-9)
                throw validation_error("row " + std::to_string(entries[k].row) +
                                       " weights sum to " + std::to_string(sum));
            k = end;
        }
    }
}

Eigen::VectorXd top_t_truncate(const Eigen::VectorXd& row, int t) {
    if (t < 1) throw validation_error("top-t truncation requires t >= 1");
    const auto n = row.size();
    if (t >= n) return row;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + (t - 1), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                         if (row[a] != row[b]) return row[a] > row[b];
                         return a < b;  // ties keep the lower column id
                     });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < t; ++k) out[order[static_cast<std::size_t>(k)]] = row[order[static_cast<std::size_t>(k)]];
    return out;
}

Eigen::VectorXd threshold_truncate(const Eigen::VectorXd& row, double threshold) {
    Eigen::VectorXd out = row;
    for (Eigen::Index i = 0; i < out.size(); ++i)
        if (out[i] < threshold) out[i] = 0.0;
    return out;
}

Eigen::VectorXd variance_truncate(const Eigen::VectorXd& row, double sigma, int c,
                                  bool population_variance) {
    std::int64_t count = 0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        if (row[i] != 0.0) {
            ++count;
            sum += row[i];
        }
    }
    if (count < c) return row;

    double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i)
        if (row[i] != 0.0) ss += (row[i] - mean) * (row[i] - mean);
    double denom = population_variance ? static_cast<double>(count)
                                       : static_cast<double>(std::max<std::int64_t>(count - 1, 1));
    double var = ss / denom;
    if (var <= sigma) return Eigen::VectorXd::Zero(row.size());
    return row;
}

SparseMapping build_mapping(const SimilaritySource& sim, const NoiseConfig& cfg,
                            const BuildOptions& opts) {
    cfg.validate();
    const std::int64_t rows = sim.rows();
    const std::int64_t cols = sim.cols();

    SparseMapping m;
    m.rows = rows;
    m.cols = cols;
    m.config = cfg;
    m.row_kind.assign(static_cast<std::size_t>(rows), RowKind::dropped_empty);

    const std::int64_t block = std::max<std::int64_t>(1, opts.block_rows);
    const auto n_blocks = static_cast<std::size_t>(rows == 0 ? 0 : (rows + block - 1) / block);
    std::vector<std::vector<MappingEntry>> block_entries(n_blocks);
    std::mutex merge_mutex;

    for_each_block(rows, block, opts.threads, [&](std::int64_t b, std::int64_t e) {
        Eigen::MatrixXd scores = sim.block(b, e);
        std::vector<MappingEntry> local;
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            Eigen::VectorXd row = scores.row(r).transpose();
            row = top_t_truncate(row, cfg.t);
            row = threshold_truncate(row, cfg.threshold);
            std::int64_t nnz_before = (row.array() != 0.0).count();
            row = variance_truncate(row, cfg.sigma, cfg.c, cfg.population_variance);
            std::int64_t nnz_after = (row.array() != 0.0).count();

            const auto global_row = static_cast<std::size_t>(b + r);
            if (nnz_after == 0) {
                m.row_kind[global_row] =
                    nnz_before > 0 ? RowKind::dropped_variance : RowKind::dropped_empty;
                continue;
            }
            // A surviving row whose scores cannot be normalized to a
            // distribution (sum <= 0, only possible with a negative
            // threshold) is discarded like an empty one.
            if (cfg.row_normalize && row.sum() <= 0.0) {
                m.row_kind[global_row] = RowKind::dropped_empty;
                continue;
            }
            m.row_kind[global_row] = RowKind::aligned;
            for (Eigen::Index j = 0; j < row.size(); ++j)
                if (row[j] != 0.0)
                    local.push_back(MappingEntry{static_cast<std::uint32_t>(global_row),
                                                 static_cast<std::uint32_t>(j),
                                                 static_cast<float>(row[j]), 0.0});
        }
        std::lock_guard<std::mutex> lock(merge_mutex);
        block_entries[static_cast<std::size_t>(b / block)] = std::move(local);
    });

    for (auto& chunk : block_entries)
        m.entries.insert(m.entries.end(), chunk.begin(), chunk.end());
    m.rebuild_row_index();
    return m;
}

void save_mapping(const SparseMapping& mapping, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open file for writing: " + path);

    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_digest(out, mapping.source_vocab_digest);
    write_digest(out, mapping.target_vocab_digest);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(mapping.config.t));
    write_pod<double>(out, mapping.config.threshold);
    write_pod<double>(out, mapping.config.sigma);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(mapping.config.c));
    write_pod<std::uint8_t>(out, mapping.config.population_variance ? 1 : 0);
    write_pod<std::uint8_t>(out, mapping.config.row_normalize ? 1 : 0);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(mapping.rows));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(mapping.cols));
    write_pod<std::uint32_t>(out, mapping.csls_k);
    write_digest(out, mapping.source_emb_digest);
    write_digest(out, mapping.target_emb_digest);
    write_digest(out, mapping.transform_digest);

    std::uint64_t n_var = 0;
    for (auto k : mapping.row_kind)
        if (k == RowKind::dropped_variance) ++n_var;
    write_pod<std::uint64_t>(out, n_var);
    for (std::size_t r = 0; r < mapping.row_kind.size(); ++r)
        if (mapping.row_kind[r] == RowKind::dropped_variance)
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r));

    write_pod<std::uint64_t>(out, mapping.entries.size());
    for (const auto& e : mapping.entries) {
        write_pod<std::uint32_t>(out, e.row);
        write_pod<std::uint32_t>(out, e.col);
        write_pod<float>(out, e.score);
    }
    if (!out) throw io_error("write failed: " + path);
}

SparseMapping load_mapping(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open mapping file: " + path);

    expect_magic(in, kMagic, "mapping");
    auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kVersion)
        throw io_error(path + ": unsupported mapping format version " + std::to_string(version));

    SparseMapping m;
    m.source_vocab_digest = read_digest(in, "source vocab digest");
    m.target_vocab_digest = read_digest(in, "target vocab digest");
    m.config.t = static_cast<int>(read_pod<std::uint32_t>(in, "t"));
    m.config.threshold = read_pod<double>(in, "threshold");
    m.config.sigma = read_pod<double>(in, "sigma");
    m.config.c = static_cast<int>(read_pod<std::uint32_t>(in, "c"));
    m.config.population_variance = read_pod<std::uint8_t>(in, "variance kind") != 0;
    m.config.row_normalize = read_pod<std::uint8_t>(in, "normalize flag") != 0;
    m.rows = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "rows"));
    m.cols = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "cols"));
    if (m.rows > (1ll << 31) || m.cols > (1ll << 31))
        throw io_error(path + ": implausible mapping shape");
    m.csls_k = read_pod<std::uint32_t>(in, "csls k");
    m.source_emb_digest = read_digest(in, "source embedding digest");
    m.target_emb_digest = read_digest(in, "target embedding digest");
    m.transform_digest = read_digest(in, "transform digest");

    m.row_kind.assign(static_cast<std::size_t>(m.rows), RowKind::dropped_empty);
    auto n_var = read_pod<std::uint64_t>(in, "dropped-variance count");
    for (std::uint64_t i = 0; i < n_var; ++i) {
        auto r = read_pod<std::uint32_t>(in, "dropped-variance row id");
        if (r >= m.rows) throw io_error(path + ": dropped-variance row id out of range");
        m.row_kind[r] = RowKind::dropped_variance;
    }

    auto nnz = read_pod<std::uint64_t>(in, "nnz");
    if (nnz > static_cast<std::uint64_t>(m.rows) * static_cast<std::uint64_t>(m.config.t))
        throw io_error(path + ": nnz " + std::to_string(nnz) + " exceeds t * rows");
    m.entries.reserve(nnz);
    for (std::uint64_t i = 0; i < nnz; ++i) {
        MappingEntry e;
        e.row = read_pod<std::uint32_t>(in, "entry row");
        e.col = read_pod<std::uint32_t>(in, "entry col");
        e.score = read_pod<float>(in, "entry score");
        if (e.row >= m.rows || e.col >= m.cols)
            throw io_error(path + ": entry out of bounds");
        m.row_kind[e.row] = RowKind::aligned;
        m.entries.push_back(e);
    }
    char extra;
    if (in.read(&extra, 1)) throw io_error(path + ": trailing bytes after mapping data");

    m.rebuild_row_index();
    try {
        m.validate();
    } catch (const validation_error& e) {
        throw io_error(path + ": corrupt mapping: " + e.what());
    }
    return m;
}

void verify_mapping_vocabs(const SparseMapping& mapping, const Vocabulary& source,
                           const Vocabulary& target, bool force) {
    bool src_ok = mapping.source_vocab_digest == source.digest();
    bool tgt_ok = mapping.target_vocab_digest == target.digest();
    if (src_ok && tgt_ok) return;
    std::string msg = "mapping provenance mismatch:";
    if (!src_ok) msg += " source vocabulary digest differs;";
    if (!tgt_ok) msg += " target vocabulary digest differs;";
    if (force) return;  // caller accepted the risk
    throw validation_error(msg + " pass force to override");
}

} // namespace lexfuse
