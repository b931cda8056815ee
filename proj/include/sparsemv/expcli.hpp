#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsemv/bounds.hpp"
#include "sparsemv/meanmc.hpp"
#include "sparsemv/models.hpp"

namespace sparsemv {

// Invalid experiment configuration; `where` is a JSON pointer or "line L, column C".
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& where, const std::string& what)
        : std::runtime_error(where.empty() ? what : where + ": " + what), where_(where) {}
    [[nodiscard]] const std::string& where() const { return where_; }

private:
    std::string where_;
};

// ---- system matrix ------------------------------------------------------------

enum class FrequencyUnit { radians, cycles };

// theta_l = start + step * l for l = 0..L-1; `cycles` multiplies by 2 pi.
struct ThetaRule {
    double start = 0.2;
    double step = 3.9e-3;
    FrequencyUnit unit = FrequencyUnit::cycles;
};

// M x 2L matrix [cos(theta_l n) | sin(theta_l n)], n = 0..M-1.
[[nodiscard]] Matrix build_fourier_H(Index M, Index L, const ThetaRule& rule = {});

// sigma^2 Tr{(H_K^T H_K)^-1}: CRB with known support K.
[[nodiscard]] double oracle_crb(const SlmProblem& p, const Support& K);

// ---- configuration --------------------------------------------------------------

inline constexpr int kConfigSchemaVersion = 1;

enum class Scaling { amplitude, power };
enum class Normalization { none, sdpcm_oracle };

struct EstimatorSpec {
    std::string name;
    std::string type;        // ls, ht, ml, omp, sdpcm_unbiased, sdpcm_ht, sdpcm_ml
    double threshold = 0.0;
    int iterations = 0;
    std::string variance;    // mc, quadrature, none
    std::string gradient;    // score, fd, quadrature
    double fd_step = kDefaultFdStep;
};

struct BoundSpec {
    std::string name;
    std::string type;        // oracle_crb, hcrb, crb, rkhs_a, rkhs_b, barankin, spectrum, sdpcm_projection, fisher
    std::string estimator;   // empty: unbiased mean
    IndexSetRule index_set = IndexSetRule::swap_smallest;
};

struct ExperimentConfig {
    std::string name;
    std::string family;  // slm, ssnm, sdpcm
    std::optional<SlmProblem> slm;
    std::optional<SdpcmProblem> sdpcm;
    Support support;     // 0-based internally; 1-based in the JSON document
    std::vector<double> snr;
    Scaling scaling = Scaling::amplitude;
    Normalization normalization = Normalization::none;
    std::vector<EstimatorSpec> estimators;
    std::vector<BoundSpec> bounds;
    McConfig mc;
    std::string csv_name;
    std::string svg_name;
    nlohmann::json document;  // the validated source document

    [[nodiscard]] Index dim() const;
    [[nodiscard]] double sigma2() const;
    [[nodiscard]] int sparsity() const;
    // x0 at one SNR value: scale * indicator(support).
    [[nodiscard]] Vector parameter_at(double snr) const;
    [[nodiscard]] double normalizer_at(double snr) const;
};

[[nodiscard]] ExperimentConfig parse_config(const nlohmann::json& doc);
// Reads and parses a JSON file; syntax errors are reported with line and column.
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json parse_json_text(const std::string& text);

// Override keys: trials, seed, workers, snr (list of values).
[[nodiscard]] nlohmann::json apply_overrides(nlohmann::json doc, const nlohmann::json& overrides);

[[nodiscard]] std::vector<std::string> preset_ids();
[[nodiscard]] nlohmann::json preset_config(const std::string& id);

// ---- sweep --------------------------------------------------------------------------

struct SweepRow {
    double snr_linear = 0.0;
    double snr_db = 0.0;
    std::vector<double> variance;  // per estimator with a variance column
    std::vector<double> std_err;
    std::vector<double> bound;     // per bound
    double normalizer = 1.0;       // values are divided by this
    std::uint64_t seed = 0;

    bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
    std::vector<std::string> variance_names;
    std::vector<std::string> bound_names;
    std::vector<SweepRow> rows;
    // Bound components whose Monte Carlo mean data gave a negative value and were set to 0.
    int clamped_components = 0;

    [[nodiscard]] std::vector<std::string> header() const;
};

[[nodiscard]] SweepRow evaluate_point(const ExperimentConfig& cfg, std::size_t point_index, int* clamped = nullptr);
[[nodiscard]] SweepResult run_sweep(const ExperimentConfig& cfg);

void write_csv(const SweepResult& result, std::ostream& out);
void write_csv(const SweepResult& result, const std::filesystem::path& path);
[[nodiscard]] SweepResult read_csv(std::istream& in);
[[nodiscard]] SweepResult read_csv(const std::filesystem::path& path);

struct FigureOutputs {
    std::filesystem::path config;
    std::filesystem::path csv;
    std::filesystem::path svg;
    SweepResult result;
};

// Writes <id>.json (effective config), the CSV and the SVG into out_dir.
[[nodiscard]] FigureOutputs reproduce_figure(const std::string& id, const nlohmann::json& overrides,
                                             const std::filesystem::path& out_dir);

}  // namespace sparsemv
