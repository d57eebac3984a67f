#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/plan.hpp"
#include "hyqe/rational.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

/// Unit costs, weights and thresholds. Values are exact so that decimal
/// config entries such as 0.001 compare and sum without rounding.
struct CostModelParams {
    Rational c_cpu{1, 1000};
    Rational c_io{1, 10};
    Rational c_call{1};
    Rational alpha{1, 1000};
    Rational w_sys{1};
    Rational w_llm{1};
    Rational epsilon{2};
    std::size_t tau = 6;
    std::uint64_t page_size = 8192;
    /// Output fraction for range, contains and column-to-column filters.
    Rational range_selectivity{1, 3};
    Rational semantic_selectivity{1, 3};

    /// Throws ContractViolation when epsilon < 1, tau < 2, a unit cost or
    /// weight is negative, or page_size is 0.
    void check() const;
};

nlohmann::ordered_json to_json(const CostModelParams& p);
/// Reads any subset of the fields; the rest keep `base` values.
CostModelParams cost_params_from_json(const nlohmann::json& j, CostModelParams base = {});

enum class CardBasis { Exact, Formula };

struct CardinalityEstimate {
    Rational gamma_in;
    Rational gamma_out;
    CardBasis basis = CardBasis::Formula;
};

/// floor(|A|·|B| / max(dA, dB)); 0 when either side is empty. Throws
/// PlanningError when both distinct counts are 0 over nonempty inputs.
std::uint64_t estimate_join_card(std::uint64_t size_a, std::uint64_t size_b, std::uint64_t distinct_a,
                                 std::uint64_t distinct_b);
/// The unfloored formula value used inside plan estimation.
Rational join_card(const Rational& size_a, const Rational& size_b, const Rational& distinct_a, const Rational& distinct_b);

std::uint64_t estimate_union_card(std::uint64_t size_a, std::uint64_t size_b);

Rational sys_cost(const Rational& gamma_in, const Rational& pages, const CostModelParams& p);
Rational llm_cost(const Rational& gamma_in, const Rational& expected_tokens, const CostModelParams& p);

/// ceil(rows × row_bytes / page_size).
Rational pages_for(const Rational& rows, const Rational& row_bytes, std::uint64_t page_size);

/// What the cost functions need to price one step.
struct StepEstimate {
    CardinalityEstimate card;
    Rational pages;
    /// Tokens shipped per input row; 0 for relational steps.
    Rational expected_tokens;
    /// Estimated bytes per output row and per-column distinct counts.
    Rational out_row_bytes;
    std::map<std::string, Rational> distinct;
};

using PlanEstimates = std::map<std::string, StepEstimate>;

/// Per-column statistics carried through estimation.
struct ColumnStats {
    std::string name;
    Rational distinct;
    Rational bytes;
    Rational tokens;
    Rational null_fraction;
};

/// Estimates every step of a compiled plan from the database's profiles.
/// Throws SchemaError for unknown columns.
PlanEstimates estimate_plan(const PlanDag& dag, const Database& db, const CostModelParams& p);

/// Σ w_sys·C_sys + w_llm·C_llm over the plan. Semantic steps carry only the
/// inference term and relational steps only the system term. Throws
/// PlanningError when a step has no estimate.
Rational plan_cost(const PlanDag& dag, const PlanEstimates& stats, const CostModelParams& p);

/// Weighted cost of a single step.
Rational step_cost(const PlanStep& step, const StepEstimate& e, const CostModelParams& p);

struct CalibrationWorkload {
    std::vector<std::size_t> sizes{1000, 10000, 100000};
    std::size_t text_words = 8;
    std::uint64_t seed = 7;
    std::size_t repetitions = 3;
};

struct ScanMeasurement {
    std::size_t rows = 0;
    std::uint64_t pages = 0;
    double cpu_seconds = 0.0;
    double io_seconds = 0.0;
};

/// Observed backend calls, for fitting c_call and alpha.
struct BackendSample {
    double latency_seconds = 0.0;
    std::uint64_t tokens = 0;
};

struct CalibrationReport {
    CostModelParams params;
    std::vector<ScanMeasurement> measurements;
    std::vector<double> cpu_residuals;
    std::vector<double> io_residuals;
    std::size_t backend_samples = 0;
    bool backend_fitted = false;
};

nlohmann::ordered_json to_json(const CalibrationReport& r);

using ScanMeasurer = std::function<ScanMeasurement(std::size_t rows)>;

/// Deterministic synthetic table: id, numeric value, category, free text.
Relation synthetic_relation(std::size_t rows, std::size_t text_words, std::uint64_t seed);

/// Times a filter pass (CPU) and a CSV serialization pass (I/O) over a
/// synthetic table of the given size.
ScanMeasurer default_scan_measurer(const CalibrationWorkload& w);

/// Least-squares slopes of CPU time over rows and I/O time over pages give
/// c_cpu and c_io; c_call and alpha come from backend samples when at least
/// two distinct token counts exist, otherwise they keep `base` values.
/// Throws PlanningError on fewer than 2 distinct sizes or a non-positive slope.
CalibrationReport calibrate(const CalibrationWorkload& w, const std::vector<BackendSample>& backend_stats,
                            const ScanMeasurer& measure, CostModelParams base = {});

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    std::vector<double> residuals;
};

/// Ordinary least squares. Throws PlanningError with fewer than 2 distinct x.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hyqe
