#include "race/report.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace race {

namespace {

std::string num(double x) {
    std::ostringstream os;
    os << std::setprecision(10) << x;
    return os.str();
}

}  // namespace

std::vector<ReportRow> report_rows(const ScalingExperiment& ex, bool pass) {
    std::vector<ReportRow> rows;
    for (std::size_t g = 0; g < ex.grid.size(); ++g) {
        rows.push_back({ex.name, ex.grid[g], ex.seeds, ex.errors[g], ex.std_errors[g], ex.slope, ex.r2, pass});
    }
    return rows;
}

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
    os << kReportHeader << '\n';
    for (const ReportRow& r : rows) {
        os << r.experiment << ',' << num(r.grid_value) << ',' << r.seeds << ',' << num(r.mean_error) << ','
           << num(r.std_error) << ',' << num(r.slope) << ',' << num(r.r2) << ',' << (r.pass ? "pass" : "fail")
           << '\n';
    }
}

void write_report_text(std::ostream& os, const std::vector<ReportRow>& rows) {
    os << std::left << std::setw(22) << "experiment" << std::right << std::setw(12) << "grid" << std::setw(7)
       << "seeds" << std::setw(14) << "mean_error" << std::setw(12) << "std_error" << std::setw(10) << "slope"
       << std::setw(8) << "r2" << "  result\n";
    for (const ReportRow& r : rows) {
        os << std::left << std::setw(22) << r.experiment << std::right << std::setw(12) << num(r.grid_value)
           << std::setw(7) << r.seeds << std::setw(14) << std::setprecision(6) << r.mean_error << std::setw(12)
           << std::setprecision(3) << r.std_error << std::setw(10) << std::setprecision(4) << r.slope
           << std::setw(8) << std::setprecision(4) << r.r2 << "  " << (r.pass ? "pass" : "fail") << '\n';
    }
}

}  // namespace race
