#include "translasso/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "translasso/rng.hpp"

namespace translasso {

MatrixView Instance::design(std::size_t k) const
{
    if (k == 0 || k > num_classes()) throw std::out_of_range("instance: class index out of range");
    return view_rows(stacked_design, row_offsets[k - 1], row_counts[k - 1]);
}

DatasetView Instance::dataset(std::size_t k) const
{
    return {design(k), &responses.at(k - 1)};
}

std::vector<DatasetView> Instance::datasets() const
{
    std::vector<DatasetView> out;
    for (std::size_t k = 1; k <= num_classes(); ++k) out.push_back(dataset(k));
    return out;
}

std::size_t support_size(double fraction, std::size_t num_features)
{
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(num_features)));
}

Instance generate_instance(const ProblemGeometry& geometry, std::size_t num_features, std::uint64_t seed)
{
    if (num_features == 0) throw std::invalid_argument("generate_instance: N must be positive");
    const std::size_t K = geometry.num_classes();
    std::vector<std::size_t> sizes(K + 1);
    for (std::size_t b = 0; b <= K; ++b) sizes[b] = support_size(geometry.block_fraction(b), num_features);
    if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) > num_features)
        throw std::invalid_argument("generate_instance: support sizes exceed N (geometry infeasible at this N)");

    Instance inst{geometry, num_features, seed, {}, {}, {}, {}, {}};
    const auto n = static_cast<Eigen::Index>(num_features);

    // Disjoint supports: consecutive slices of one uniform permutation.
    std::vector<std::size_t> perm(num_features);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto support_rng = make_stream(seed, streams::supports);
    std::shuffle(perm.begin(), perm.end(), support_rng);
    inst.truth.num_features = num_features;
    std::size_t cursor = 0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t b = 0; b <= K; ++b) {
        std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     perm.begin() + static_cast<std::ptrdiff_t>(cursor + sizes[b]));
        std::sort(idx.begin(), idx.end());
        cursor += sizes[b];
        auto truth_rng = make_stream(seed, streams::truth, b);
        Vector values(static_cast<Eigen::Index>(idx.size()));
        for (auto& v : values) v = gauss(truth_rng);
        inst.truth.supports.push_back(std::move(idx));
        inst.truth.values.push_back(std::move(values));
    }

    Eigen::Index total_rows = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const auto m = static_cast<Eigen::Index>(std::llround(geometry.alpha()[k] * static_cast<double>(num_features)));
        if (m < 1) throw std::invalid_argument("generate_instance: alpha * N rounds to zero samples");
        inst.row_offsets.push_back(total_rows);
        inst.row_counts.push_back(m);
        total_rows += m;
    }
    inst.stacked_design.resize(total_rows, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(num_features));
    for (std::size_t k = 0; k < K; ++k) {
        auto rng = make_stream(seed, streams::design, k + 1);
        auto block = inst.stacked_design.middleRows(inst.row_offsets[k], inst.row_counts[k]);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < block.rows(); ++i) block(i, j) = scale * gauss(rng);
    }

    for (std::size_t k = 1; k <= K; ++k) {
        const auto A = inst.design(k);
        Vector y = Vector::Zero(A.rows());
        for (std::size_t b : {std::size_t{0}, k}) {
            const auto& idx = inst.truth.supports[b];
            for (std::size_t j = 0; j < idx.size(); ++j)
                y.noalias() += inst.truth.values[b][static_cast<Eigen::Index>(j)] *
                               A.col(static_cast<Eigen::Index>(idx[j]));
        }
        const double sigma = geometry.sigma()[k - 1];
        if (sigma > 0.0) {
            auto rng = make_stream(seed, streams::noise, k);
            for (auto& v : y) v += sigma * gauss(rng);
        }
        inst.responses.push_back(std::move(y));
    }
    return inst;
}

namespace {

struct RunningMean
{
    double sum = 0.0;
    double sum_sq = 0.0;
    int count = 0;

    void add(double v)
    {
        sum += v;
        sum_sq += v * v;
        ++count;
    }
    MeanWithError result() const
    {
        const double mean = sum / count;
        const double var = std::max(0.0, (sum_sq - count * mean * mean) / (count - 1));
        return {mean, std::sqrt(var / count)};
    }
};

} // namespace

EmpiricalErrors empirical_test_error(const Instance& instance, const Estimate& first_stage,
                                     const Estimate& second_stage, const Hyperparams& hyper, int n_test_sets,
                                     std::uint64_t seed)
{
    if (n_test_sets < 2) throw std::invalid_argument("empirical_test_error: n_test_sets must be at least 2");
    const auto n = static_cast<Eigen::Index>(instance.num_features);
    if (first_stage.coefficients.size() != n || second_stage.coefficients.size() != n)
        throw std::invalid_argument("empirical_test_error: estimate dimension mismatch");
    const std::size_t K = instance.num_classes();
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double inv_n = 1.0 / static_cast<double>(n);
    const Vector combined = hyper.kappa * first_stage.coefficients + second_stage.coefficients;

    std::vector<Vector> targets;
    for (std::size_t k = 1; k <= K; ++k) targets.push_back(instance.truth.class_target(k));

    RunningMean stage1, stage2;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector row(n);
    for (int t = 0; t < n_test_sets; ++t) {
        double err1 = 0.0, err2 = 0.0;
        for (std::size_t k = 1; k <= K; ++k) {
            auto rng = make_stream(seed, streams::test_sets, static_cast<std::uint64_t>(t) * 1024 + k);
            const double sigma = instance.geometry.sigma()[k - 1];
            for (Eigen::Index i = 0; i < instance.row_counts[k - 1]; ++i) {
                for (auto& v : row) v = scale * gauss(rng);
                const double y = row.dot(targets[k - 1]) + sigma * gauss(rng);
                const double r1 = y - row.dot(first_stage.coefficients);
                err1 += r1 * r1;
                if (k == 1) {
                    const double r2 = y - row.dot(combined);
                    err2 += r2 * r2;
                }
            }
        }
        stage1.add(err1 * inv_n);
        stage2.add(err2 * inv_n);
    }
    return {stage1.result(), stage2.result(), n_test_sets};
}

EmpiricalOrderParams empirical_order_params(const Instance& instance, const Estimate& first_stage,
                                            const Estimate& second_stage)
{
    const auto& x1 = first_stage.coefficients;
    const auto& x2 = second_stage.coefficients;
    const double inv_n = 1.0 / static_cast<double>(instance.num_features);
    EmpiricalOrderParams out;
    out.q1 = x1.squaredNorm() * inv_n;
    out.q2 = x2.squaredNorm() * inv_n;
    out.qr = x1.dot(x2) * inv_n;
    for (std::size_t b = 0; b < instance.truth.supports.size(); ++b) {
        const auto& idx = instance.truth.supports[b];
        const auto& val = instance.truth.values[b];
        double o1 = 0.0, o2 = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto i = static_cast<Eigen::Index>(idx[j]);
            o1 += x1[i] * val[static_cast<Eigen::Index>(j)];
            o2 += x2[i] * val[static_cast<Eigen::Index>(j)];
        }
        out.m1.push_back(o1 * inv_n);
        out.m2.push_back(o2 * inv_n);
    }
    return out;
}

namespace {

constexpr char kMagic[8] = {'T', 'L', 'I', 'N', 'S', 'T', '0', '1'};

template <class T>
void put(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("load_instance: truncated file");
    return v;
}

void put_doubles(std::ostream& os, const double* p, std::size_t n)
{
    put<std::uint64_t>(os, n);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& is)
{
    const auto n = get<std::uint64_t>(is);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("load_instance: truncated file");
    return v;
}

Vector to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

void save_instance(const Instance& inst, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_instance: cannot open " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(os, inst.seed);
    put<std::uint64_t>(os, inst.num_features);
    put<double>(os, inst.geometry.pi0());
    put_doubles(os, inst.geometry.pi().data(), inst.geometry.num_classes());
    put_doubles(os, inst.geometry.alpha().data(), inst.geometry.num_classes());
    put_doubles(os, inst.geometry.sigma().data(), inst.geometry.num_classes());
    for (std::size_t b = 0; b < inst.truth.supports.size(); ++b) {
        const auto& idx = inst.truth.supports[b];
        put<std::uint64_t>(os, idx.size());
        for (auto i : idx) put<std::uint64_t>(os, i);
        put_doubles(os, inst.truth.values[b].data(), static_cast<std::size_t>(inst.truth.values[b].size()));
    }
    for (std::size_t k = 0; k < inst.num_classes(); ++k) {
        put<std::int64_t>(os, inst.row_counts[k]);
        put_doubles(os, inst.responses[k].data(), static_cast<std::size_t>(inst.responses[k].size()));
    }
    put_doubles(os, inst.stacked_design.data(), static_cast<std::size_t>(inst.stacked_design.size()));
    if (!os) throw std::runtime_error("save_instance: write failed for " + path.string());
}

Instance load_instance(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_instance: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw std::runtime_error("load_instance: not an instance file: " + path.string());
    const auto seed = get<std::uint64_t>(is);
    const auto n = get<std::uint64_t>(is);
    const double pi0 = get<double>(is);
    auto pi = get_doubles(is);
    auto alpha = get_doubles(is);
    auto sigma = get_doubles(is);
    Instance inst{ProblemGeometry(pi0, pi, alpha, sigma), n, seed, {}, {}, {}, {}, {}};
    const std::size_t K = pi.size();
    inst.truth.num_features = n;
    for (std::size_t b = 0; b <= K; ++b) {
        const auto count = get<std::uint64_t>(is);
        std::vector<std::size_t> idx(count);
        for (auto& i : idx) i = get<std::uint64_t>(is);
        inst.truth.supports.push_back(std::move(idx));
        inst.truth.values.push_back(to_vector(get_doubles(is)));
    }
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const auto rows = get<std::int64_t>(is);
        inst.row_offsets.push_back(offset);
        inst.row_counts.push_back(rows);
        offset += rows;
        inst.responses.push_back(to_vector(get_doubles(is)));
    }
    const auto raw = get_doubles(is);
    if (raw.size() != static_cast<std::size_t>(offset) * n)
        throw std::runtime_error("load_instance: design size mismatch");
    inst.stacked_design = Eigen::Map<const Matrix>(raw.data(), offset, static_cast<Eigen::Index>(n));
    return inst;
}

} // namespace translasso
