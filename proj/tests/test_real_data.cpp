#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "translasso/real_data.hpp"
#include "translasso/synthetic.hpp"

using namespace translasso;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path file(const std::string& name, const std::string& text) const
    {
        std::ofstream(path / name) << text;
        return path / name;
    }
};

std::vector<std::string> names(std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t j = 0; j < n; ++j) out.push_back("f" + std::to_string(j));
    return out;
}

SearchGrids small_grids()
{
    auto g = SearchGrids::defaults();
    g.kappa = {0.0, 0.5, 1.0};
    g.dlambda_ratio = {0.0, 0.5};
    g.pretraining_s = {0.0, 0.5, 1.0};
    g.lambda_points = 9;
    g.max_cycles = 2;
    return g;
}

} // namespace

TEST_CASE("tables parse with either delimiter and any response position")
{
    TempDir dir("translasso_tables");
    const auto csv = dir.file("a.csv", "x1,y,x2\n1,2,3\n4,5,6\n\n");
    const auto tsv = dir.file("b.tsv", "x1\ty\tx2\n1\t2\t3\n4\t5\t6\n");
    for (const auto& p : {csv, tsv}) {
        const auto t = read_table(p, {});
        CHECK(t.feature_names == std::vector<std::string>{"x1", "x2"});
        CHECK(t.design.rows() == 2);
        CHECK(t.design(1, 1) == 6.0);
        CHECK(t.response[0] == 2.0);
    }
}

TEST_CASE("malformed tables report file, line and column")
{
    TempDir dir("translasso_bad_tables");
    const auto bad = dir.file("bad.csv", "x1,y\n1,2\n3,oops\n");
    try {
        read_table(bad, {});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.csv:3") != std::string::npos);
        CHECK(msg.find("column 2") != std::string::npos);
    }
    CHECK_THROWS_AS(read_table(dir.file("short.csv", "x1,y\n1\n"), {}), DataError);
    CHECK_THROWS_AS(read_table(dir.file("noy.csv", "x1,x2\n1,2\n"), {}), DataError);
    CHECK_THROWS_AS(read_table(dir.file("empty.csv", ""), {}), DataError);
    CHECK_THROWS_AS(read_table(dir.file("header.csv", "x1,y\n"), {}), DataError);
    CHECK_THROWS_AS(read_table(dir.path / "missing.csv", {}), DataError);
}

TEST_CASE("classes with mismatched headers are rejected by column")
{
    TempDir dir("translasso_headers");
    const ClassSource sources[] = {{"a", dir.file("a.csv", "x1,x2,y\n1,2,3\n"), {}},
                                   {"b", dir.file("b.csv", "x1,z,y\n1,2,3\n"), {}}};
    try {
        load_classes(sources, {});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("'z'") != std::string::npos);
    }
    const ClassSource dup[] = {{"a", dir.path / "a.csv", {}}, {"a", dir.path / "a.csv", {}}};
    CHECK_THROWS_AS(load_classes(dup, {}), DataError);
}

TEST_CASE("write and read round-trip bit-identically")
{
    TempDir dir("translasso_roundtrip");
    const auto inst = generate_instance(ProblemGeometry(0.1, {0.1}, {0.5}, {0.3}), 40, 2);
    const Matrix A = inst.design(1);
    write_table(dir.path / "t.csv", names(40), A, inst.responses[0]);
    const auto t = read_table(dir.path / "t.csv", {});
    CHECK(t.design == A);
    CHECK(t.response == inst.responses[0]);
}

TEST_CASE("pooled standardization uses training rows of every class")
{
    TempDir dir("translasso_standardize");
    const ClassSource sources[] = {{"a", dir.file("a.csv", "x,c,y\n0,5,1\n2,5,1\n"), dir.file("at.csv", "x,c,y\n4,5,0\n")},
                                   {"b", dir.file("b.csv", "x,c,y\n4,5,1\n6,5,1\n"), {}}};
    LoadOptions opts;
    opts.standardize = true;
    const auto data = load_classes(sources, opts);
    REQUIRE(data.standardization);
    CHECK(data.standardization->mean[0] == doctest::Approx(3.0));
    CHECK(data.standardization->scale[0] == doctest::Approx(std::sqrt(5.0)));
    CHECK(data.standardization->scale[1] == 1.0);  // constant column
    CHECK(data.classes[0].design(0, 0) == doctest::Approx(-3.0 / std::sqrt(5.0)));
    CHECK(data.classes[0].test_design(0, 0) == doctest::Approx(1.0 / std::sqrt(5.0)));
    CHECK(data.classes[0].design(0, 1) == 0.0);
    const Vector back = data.standardization->to_original_scale(Vector::Constant(2, 1.0));
    CHECK(back[0] == doctest::Approx(1.0 / std::sqrt(5.0)));
}

TEST_CASE("jackknife standard error of a mean")
{
    const double values[] = {1.0, 2.0, 4.0};
    // leave-one-out means 3, 2.5, 1.5; their mean 7/3
    const double loo[] = {3.0, 2.5, 1.5};
    double ss = 0.0;
    for (double v : loo) ss += (v - 7.0 / 3.0) * (v - 7.0 / 3.0);
    CHECK(jackknife_std_error(values) == doctest::Approx(std::sqrt(2.0 / 3.0 * ss)));
    // for the mean it coincides with the textbook sd / sqrt(n)
    CHECK(jackknife_std_error(values) == doctest::Approx(std::sqrt(7.0 / 9.0)));
    const double one[] = {5.0};
    CHECK(jackknife_std_error(one) == 0.0);
}

TEST_CASE("pipeline from CSV files equals the in-memory pipeline")
{
    TempDir dir("translasso_pipeline");
    const ProblemGeometry g(0.1, {0.1, 0.1}, {0.6, 1.0}, {0.2, 0.2});
    const std::size_t n = 50;
    const auto inst = generate_instance(g, n, 17);
    const auto test = generate_instance(g, n, 18);

    DataCollection memory;
    memory.feature_names = names(n);
    std::vector<ClassSource> sources;
    for (std::size_t k = 1; k <= 2; ++k) {
        const std::string name = "class" + std::to_string(k);
        ClassDataset c{name, inst.design(k), inst.responses[k - 1], Matrix(0, n), Vector()};
        if (k == 1) {
            // test rows drawn from the same target (the held-out instance shares no randomness)
            c.test_design = test.design(1);
            c.test_response = test.design(1) * inst.truth.class_target(1);
        }
        write_table(dir.path / (name + ".csv"), memory.feature_names, c.design, c.response);
        ClassSource src{name, dir.path / (name + ".csv"), {}};
        if (k == 1) {
            write_table(dir.path / "test.csv", memory.feature_names, c.test_design, c.test_response);
            src.test = dir.path / "test.csv";
        }
        sources.push_back(src);
        memory.classes.push_back(std::move(c));
    }
    const auto loaded = load_classes(sources, {});

    CvOptions cv;
    cv.folds = 3;
    const auto a = run_pipeline(memory, "class1", StrategyKind::dlambda_zero, cv, small_grids());
    const auto b = run_pipeline(loaded, "class1", StrategyKind::dlambda_zero, cv, small_grids());
    CHECK(a.hyper == b.hyper);
    CHECK(a.coefficients == b.coefficients);
    CHECK(a.test.mse == b.test.mse);
    CHECK(a.test.rows == 30);
    CHECK(a.test.jackknife_se > 0.0);
    CHECK(a.hyper.dlambda == 0.0);
    CHECK(a.coefficients == a.hyper.kappa * a.first_stage.coefficients + a.second_stage.coefficients);

    write_coefficients(dir.path / "coef.csv", memory.feature_names, a.coefficients);
    std::ifstream in(dir.path / "coef.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "feature,value");
}

TEST_CASE("single-class data runs the pipeline on the target alone")
{
    const auto inst = generate_instance(ProblemGeometry(0.1, {0.1}, {0.8}, {0.2}), 40, 4);
    DataCollection data;
    data.feature_names = names(40);
    data.classes.push_back({"only", inst.design(1), inst.responses[0], Matrix(0, 40), Vector()});
    CvOptions cv;
    cv.folds = 4;
    const auto r = run_pipeline(data, "only", StrategyKind::trans_lasso, cv, small_grids());
    CHECK(r.test.rows == 0);
    CHECK(r.coefficients.allFinite());
    CHECK(r.hyper.kappa == 1.0);
    CHECK_THROWS_AS(run_pipeline(data, "missing", StrategyKind::trans_lasso, cv, small_grids()), DataError);
}
