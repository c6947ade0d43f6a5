#include "translasso/real_data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "translasso/lasso.hpp"

namespace translasso {
namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \r\t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \r\t");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char delim)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_cell(const std::string& cell, const std::filesystem::path& path, std::size_t line, std::size_t column)
{
    double v = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
        throw DataError(path.string() + ":" + std::to_string(line) + ": column " + std::to_string(column + 1) +
                        ": not a finite number: '" + cell + "'");
    return v;
}

} // namespace

void Standardization::apply(Matrix& design) const
{
    if (design.rows() == 0) return;
    design = (design.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Vector Standardization::to_original_scale(const Vector& coefficients) const
{
    return coefficients.array() / scale.array();
}

std::size_t DataCollection::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].name == name) return i;
    throw DataError("unknown class '" + name + "'");
}

Table read_table(const std::filesystem::path& path, const LoadOptions& options)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::string header;
    while (header.empty() && std::getline(in, line)) {
        ++line_no;
        header = trim(line);
    }
    if (header.empty()) throw DataError(path.string() + ": empty file");
    char delim = options.delimiter;
    if (delim == '\0') delim = header.find('\t') != std::string::npos ? '\t' : ',';

    const auto names = split(header, delim);
    std::size_t response_col = names.size();
    for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == options.response_column) response_col = j;
    if (response_col == names.size())
        throw DataError(path.string() + ": response column '" + options.response_column + "' not found in header");

    Table t;
    for (std::size_t j = 0; j < names.size(); ++j)
        if (j != response_col) t.feature_names.push_back(names[j]);

    std::vector<double> values;
    std::vector<double> response;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split(line, delim);
        if (cells.size() != names.size())
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(names.size()) + " fields, found " + std::to_string(cells.size()));
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const double v = parse_cell(cells[j], path, line_no, j);
            if (j == response_col)
                response.push_back(v);
            else
                values.push_back(v);
        }
    }
    if (response.empty()) throw DataError(path.string() + ": no data rows");

    const auto rows = static_cast<Eigen::Index>(response.size());
    const auto cols = static_cast<Eigen::Index>(t.feature_names.size());
    t.design = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, cols);
    t.response = Eigen::Map<const Vector>(response.data(), rows);
    return t;
}

void write_table(const std::filesystem::path& path, std::span<const std::string> feature_names,
                 const Matrix& design, const Vector& response, const std::string& response_column, char delimiter)
{
    if (static_cast<Eigen::Index>(feature_names.size()) != design.cols() || design.rows() != response.size())
        throw std::invalid_argument("write_table: shape mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& name : feature_names) out << name << delimiter;
    out << response_column << '\n';
    char buf[32];
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        for (Eigen::Index j = 0; j < design.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", design(i, j));
            out << buf << delimiter;
        }
        std::snprintf(buf, sizeof buf, "%.17g", response[i]);
        out << buf << '\n';
    }
}

DataCollection load_classes(std::span<const ClassSource> sources, const LoadOptions& options)
{
    if (sources.empty()) throw DataError("no class tables given");
    DataCollection data;
    auto check_header = [&](const Table& t, const std::filesystem::path& path) {
        if (data.feature_names.empty() && data.classes.empty()) {
            data.feature_names = t.feature_names;
            return;
        }
        const std::size_t n = std::min(t.feature_names.size(), data.feature_names.size());
        for (std::size_t j = 0; j < n; ++j)
            if (t.feature_names[j] != data.feature_names[j])
                throw DataError(path.string() + ": header mismatch at column '" + t.feature_names[j] +
                                "' (expected '" + data.feature_names[j] + "')");
        if (t.feature_names.size() != data.feature_names.size())
            throw DataError(path.string() + ": header mismatch at column '" +
                            (t.feature_names.size() > n ? t.feature_names[n] : data.feature_names[n]) + "'");
    };

    for (const auto& src : sources) {
        Table train = read_table(src.train, options);
        check_header(train, src.train);
        ClassDataset c;
        c.name = src.name;
        c.design = std::move(train.design);
        c.response = std::move(train.response);
        c.test_design = Matrix(0, c.design.cols());
        if (src.test) {
            Table test = read_table(*src.test, options);
            check_header(test, *src.test);
            c.test_design = std::move(test.design);
            c.test_response = std::move(test.response);
        }
        for (const auto& other : data.classes)
            if (other.name == c.name) throw DataError("duplicate class name '" + c.name + "'");
        data.classes.push_back(std::move(c));
    }

    if (options.standardize) {
        const auto cols = static_cast<Eigen::Index>(data.feature_names.size());
        Eigen::Index rows = 0;
        Vector sum = Vector::Zero(cols), sq = Vector::Zero(cols);
        for (const auto& c : data.classes) {
            rows += c.design.rows();
            sum += c.design.colwise().sum().transpose();
        }
        Standardization s;
        s.mean = sum / static_cast<double>(rows);
        for (const auto& c : data.classes) sq += (c.design.rowwise() - s.mean.transpose()).colwise().squaredNorm().transpose();
        s.scale = (sq / static_cast<double>(rows)).cwiseSqrt();
        for (Eigen::Index j = 0; j < cols; ++j)
            if (!(s.scale[j] > 0.0)) s.scale[j] = 1.0;
        for (auto& c : data.classes) {
            s.apply(c.design);
            s.apply(c.test_design);
        }
        data.standardization = std::move(s);
    }
    return data;
}

double jackknife_std_error(std::span<const double> values)
{
    const auto n = values.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (double v : values) total += v;
    std::vector<double> loo(n);
    double loo_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loo[i] = (total - values[i]) / static_cast<double>(n - 1);
        loo_mean += loo[i];
    }
    loo_mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : loo) ss += (v - loo_mean) * (v - loo_mean);
    return std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * ss);
}

PipelineResult run_pipeline(const DataCollection& data, const std::string& target, StrategyKind strategy,
                            const CvOptions& cv, const SearchGrids& grids)
{
    const std::size_t t = data.index_of(target);
    std::vector<DatasetView> views;
    views.push_back({view_of(data.classes[t].design), &data.classes[t].response});
    for (std::size_t k = 0; k < data.classes.size(); ++k)
        if (k != t) views.push_back({view_of(data.classes[k].design), &data.classes[k].response});

    PipelineResult out;
    out.target = target;
    out.tuning = cv_tune(views, strategy, cv, grids);
    out.hyper = out.tuning.chosen;
    out.first_stage = fit_pretraining(views, out.hyper.lambda1, cv.solver).estimate;
    out.second_stage = fit_finetune(views.front(), out.first_stage, out.hyper, cv.solver).estimate;
    out.coefficients = out.hyper.kappa * out.first_stage.coefficients + out.second_stage.coefficients;

    const auto& c = data.classes[t];
    if (c.has_test()) {
        const Vector resid = c.test_response - c.test_design * out.coefficients;
        std::vector<double> sq(static_cast<std::size_t>(resid.size()));
        for (Eigen::Index i = 0; i < resid.size(); ++i) sq[static_cast<std::size_t>(i)] = resid[i] * resid[i];
        out.test.rows = static_cast<int>(sq.size());
        out.test.mse = resid.squaredNorm() / static_cast<double>(resid.size());
        out.test.jackknife_se = jackknife_std_error(sq);
    }
    return out;
}

void write_coefficients(const std::filesystem::path& path, std::span<const std::string> feature_names,
                        const Vector& coefficients)
{
    if (static_cast<Eigen::Index>(feature_names.size()) != coefficients.size())
        throw std::invalid_argument("write_coefficients: shape mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "feature,value\n";
    char buf[32];
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", coefficients[static_cast<Eigen::Index>(j)]);
        out << feature_names[j] << ',' << buf << '\n';
    }
}

} // namespace translasso
