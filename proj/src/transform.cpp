#include "lexfuse/transform.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

#include "lexfuse/binio.hpp"
#include "lexfuse/errors.hpp"

namespace lexfuse {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr double kEigenvalueFloor = 1e-9;

struct Whitening {
    Eigen::MatrixXd forward;   // (M^T M)^(-1/2)
    Eigen::MatrixXd inverse;   // (M^T M)^(+1/2)
    int floored = 0;
};

Whitening whitening_of(const Eigen::MatrixXd& m, const char* side,
                       std::vector<std::string>* warnings) {
    Eigen::MatrixXd cov = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success)
        throw stage_error(std::string("eigendecomposition did not converge on the ") + side +
                          " covariance");
    Eigen::VectorXd vals = eig.eigenvalues();
    Whitening w;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < kEigenvalueFloor) {
            vals[i] = kEigenvalueFloor;
            ++w.floored;
        }
    }
    if (w.floored > 0 && warnings)
        warnings->push_back(std::string(side) + " covariance is rank-deficient: " +
                            std::to_string(w.floored) + " eigenvalue(s) floored to 1e-9");
    const Eigen::MatrixXd& v = eig.eigenvectors();
    w.forward = v * vals.array().rsqrt().matrix().asDiagonal() * v.transpose();
    w.inverse = v * vals.array().sqrt().matrix().asDiagonal() * v.transpose();
    return w;
}

Digest read_digest(std::istream& in, const char* what) {
    Digest d;
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size()));
    if (!in) throw io_error(std::string("truncated file while reading ") + what);
    return d;
}

} // namespace

LinearTransform learn_transform(const EmbeddingSet& source, const EmbeddingSet& target,
                                const OverlapDictionary& dict, const TransformConfig& cfg,
                                std::vector<std::string>* warnings) {
    if (!source.preprocessed || !target.preprocessed)
        throw validation_error("learn_transform requires preprocessed embedding sets");
    if (dict.source_size != source.size() || dict.target_size != target.size())
        throw validation_error("overlap dictionary does not match the embedding sets");
    if (dict.pairs.size() < 2)
        throw validation_error("overlap dictionary too small: need at least 2 pairs, got " +
                               std::to_string(dict.pairs.size()));
    const auto d_src = static_cast<Eigen::Index>(source.dim);
    const auto d_tgt = static_cast<Eigen::Index>(target.dim);
    if (warnings && dict.pairs.size() < static_cast<std::size_t>(std::max(d_src, d_tgt)))
        warnings->push_back("overlap dictionary has " + std::to_string(dict.pairs.size()) +
                            " pairs, fewer than max(d_src, d_tgt) = " +
                            std::to_string(std::max(d_src, d_tgt)) +
                            "; the transform may be poorly constrained");

    const auto n = static_cast<Eigen::Index>(dict.pairs.size());
    Eigen::MatrixXd x(n, d_src);
    Eigen::MatrixXd z(n, d_tgt);
    for (Eigen::Index r = 0; r < n; ++r) {
        x.row(r) = source.matrix.row(dict.pairs[static_cast<std::size_t>(r)].first).cast<double>();
        z.row(r) = target.matrix.row(dict.pairs[static_cast<std::size_t>(r)].second).cast<double>();
    }

    const double s = cfg.effective_reweight();

    Eigen::MatrixXd cross;
    Whitening wx, wz;
    if (cfg.whiten) {
        wx = whitening_of(x, "source", warnings);
        wz = whitening_of(z, "target", warnings);
        cross = (x * wx.forward).transpose() * (z * wz.forward);
    } else {
        cross = x.transpose() * z;
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
        throw stage_error("SVD of the cross-covariance did not converge");

    Eigen::VectorXd sv = svd.singularValues();
    Eigen::VectorXd scale(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        scale[i] = s == 0.0 ? 1.0 : std::pow(std::max(sv[i], 0.0), s);

    Eigen::MatrixXd core = svd.matrixU() * scale.asDiagonal() * svd.matrixV().transpose();

    LinearTransform t;
    if (cfg.whiten) {
        t.matrix = cfg.dewhiten ? (wx.forward * core * wz.inverse).eval()
                                : (wx.forward * core).eval();
    } else {
        t.matrix = core;
    }
    if (!t.matrix.allFinite()) throw stage_error("learned transform contains non-finite values");

    t.meta.whiten = cfg.whiten;
    t.meta.reweight = s;
    t.meta.dewhiten = cfg.dewhiten;
    t.meta.source_digest = source.digest();
    t.meta.target_digest = target.digest();
    return t;
}

EmbeddingSet apply_transform(const EmbeddingSet& set, const LinearTransform& transform) {
    if (set.dim != transform.matrix.rows())
        throw validation_error("transform expects dim " + std::to_string(transform.matrix.rows()) +
                               ", embedding set has dim " + std::to_string(set.dim));
    EmbeddingSet out;
    out.vocab = set.vocab;
    out.matrix = (set.matrix.cast<double>() * transform.matrix).cast<float>();
    out.dim = static_cast<int>(transform.matrix.cols());
    out.preprocessed = false;
    out.mapped = true;
    return out;
}

double alignment_residual(const EmbeddingSet& source, const EmbeddingSet& target,
                          const OverlapDictionary& dict, const Eigen::MatrixXd& transform) {
    double total = 0.0;
    for (const auto& [i, j] : dict.pairs) {
        Eigen::RowVectorXd mapped = source.matrix.row(i).cast<double>() * transform;
        total += (mapped - target.matrix.row(j).cast<double>()).squaredNorm();
    }
    return total;
}

void save_transform(const LinearTransform& transform, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open file for writing: " + path);
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(transform.matrix.rows()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(transform.matrix.cols()));
    write_pod<std::uint8_t>(out, transform.meta.whiten ? 1 : 0);
    write_pod<double>(out, transform.meta.reweight);
    write_pod<std::uint8_t>(out, transform.meta.dewhiten ? 1 : 0);
    out.write(reinterpret_cast<const char*>(transform.meta.source_digest.data()), 32);
    out.write(reinterpret_cast<const char*>(transform.meta.target_digest.data()), 32);
    for (Eigen::Index i = 0; i < transform.matrix.rows(); ++i)
        for (Eigen::Index j = 0; j < transform.matrix.cols(); ++j)
            write_pod<double>(out, transform.matrix(i, j));
    if (!out) throw io_error("write failed: " + path);
}

LinearTransform load_transform(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open transform file: " + path);
    expect_magic(in, kMagic, "transform");
    auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kVersion)
        throw io_error(path + ": unsupported transform format version " + std::to_string(version));
    auto rows = read_pod<std::uint32_t>(in, "rows");
    auto cols = read_pod<std::uint32_t>(in, "cols");
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20))
        throw io_error(path + ": implausible transform shape " + std::to_string(rows) + " x " +
                       std::to_string(cols));
    LinearTransform t;
    t.meta.whiten = read_pod<std::uint8_t>(in, "whiten flag") != 0;
    t.meta.reweight = read_pod<double>(in, "reweight exponent");
    t.meta.dewhiten = read_pod<std::uint8_t>(in, "dewhiten flag") != 0;
    t.meta.source_digest = read_digest(in, "source digest");
    t.meta.target_digest = read_digest(in, "target digest");
    t.matrix.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.matrix.rows(); ++i)
        for (Eigen::Index j = 0; j < t.matrix.cols(); ++j)
            t.matrix(i, j) = read_pod<double>(in, "transform value");
    if (!t.matrix.allFinite()) throw io_error(path + ": transform contains non-finite values");
    return t;
}

} // namespace lexfuse
