#include <sstream>
#include <string>

#include "doctest.h"
#include "race/report.hpp"
#include "race/validation.hpp"

using namespace race;

namespace {

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string line; std::getline(is, line);) out.push_back(line);
    return out;
}

ScalingExperiment sample_experiment() {
    ScalingExperiment ex;
    ex.name = "variance";
    ex.grid = {4, 16, 64};
    ex.errors = {0.4, 0.2, 0.1};
    ex.std_errors = {0.01, 0.005, 0.002};
    ex.seeds = 20;
    ex.slope = -0.5;
    ex.r2 = 1.0;
    return ex;
}

}  // namespace

TEST_CASE("report rows follow the grid") {
    const auto rows = report_rows(sample_experiment(), true);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].experiment == "variance");
    CHECK(rows[1].grid_value == 16.0);
    CHECK(rows[1].seeds == 20);
    CHECK(rows[1].mean_error == 0.2);
    CHECK(rows[1].std_error == 0.005);
    CHECK(rows[2].slope == -0.5);
    CHECK(rows[0].pass);
}

TEST_CASE("csv report has the documented header and one line per row") {
    std::ostringstream os;
    write_report_csv(os, report_rows(sample_experiment(), false));
    const auto ls = lines(os.str());
    REQUIRE(ls.size() == 4);
    CHECK(ls[0] == "experiment,grid_value,seeds,mean_error,std_error,slope,r2,pass");
    CHECK(ls[1] == "variance,4,20,0.4,0.01,-0.5,1,fail");
}

TEST_CASE("text report lists every row") {
    std::ostringstream os;
    write_report_text(os, report_rows(sample_experiment(), true));
    const auto ls = lines(os.str());
    REQUIRE(ls.size() == 4);
    CHECK(ls[0].find("experiment") == 0);
    CHECK(ls[3].find("variance") == 0);
    CHECK(ls[3].find("pass") != std::string::npos);
}

TEST_CASE("result line format") {
    CriterionResult r;
    r.id = 3;
    r.name = "collision identity";
    r.pass = true;
    r.detail = "ok";
    r.seconds = 1.25;
    CHECK(format_result_line(r) == "[PASS] 3 collision identity: ok (1.2 s)");
    r.pass = false;
    CHECK(format_result_line(r).rfind("[FAIL] 3", 0) == 0);
    r.skipped = true;
    CHECK(format_result_line(r) == "[SKIP] 3 collision identity: ok");
}

TEST_CASE("skipped criteria do not fail the suite") {
    CriterionResult a, b;
    a.pass = true;
    b.skipped = true;
    CHECK(all_passed({a, b}));
    b.skipped = false;
    CHECK_FALSE(all_passed({a, b}));
}

TEST_CASE("run_criterion rejects unknown ids") {
    CHECK_THROWS_AS(run_criterion(0, {}), std::out_of_range);
    CHECK_THROWS_AS(run_criterion(10, {}), std::out_of_range);
}

TEST_CASE("criterion results carry report rows") {
    ValidationOptions opt;
    const CriterionResult r = run_criterion(2, opt);
    CHECK(r.pass);
    CHECK(r.id == 2);
    REQUIRE_FALSE(r.rows.empty());
    CHECK(collect_rows({r, r}).size() == 2 * r.rows.size());
}
