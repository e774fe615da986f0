#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "race/theory.hpp"

namespace race {

// One row of a validation report. Columns:
// experiment,grid_value,seeds,mean_error,std_error,slope,r2,pass
struct ReportRow {
    std::string experiment;
    double grid_value = 0.0;
    std::size_t seeds = 0;
    double mean_error = 0.0;
    double std_error = 0.0;
    double slope = 0.0;
    double r2 = 0.0;
    bool pass = false;
};

inline constexpr const char* kReportHeader = "experiment,grid_value,seeds,mean_error,std_error,slope,r2,pass";

// One row per grid point; slope and r2 repeat the whole-sweep fit.
std::vector<ReportRow> report_rows(const ScalingExperiment& ex, bool pass);

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows);
void write_report_text(std::ostream& os, const std::vector<ReportRow>& rows);

}  // namespace race
