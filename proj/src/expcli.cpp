#include "sparsemv/expcli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "sparsemv/estimators.hpp"
#include "sparsemv/svg_plot.hpp"

namespace sparsemv {

using nlohmann::json;

// ---- system matrix ------------------------------------------------------------

Matrix build_fourier_H(Index M, Index L, const ThetaRule& rule) {
    if (M < 1 || L < 1) throw std::invalid_argument("build_fourier_H: M and L must be positive");
    const double unit = rule.unit == FrequencyUnit::cycles ? 2.0 * std::numbers::pi : 1.0;
    Matrix h(M, 2 * L);
    for (Index l = 0; l < L; ++l) {
        const double w = unit * (rule.start + rule.step * static_cast<double>(l));
        for (Index n = 0; n < M; ++n) {
            h(n, l) = std::cos(w * static_cast<double>(n));
            h(n, L + l) = std::sin(w * static_cast<double>(n));
        }
    }
    return h;
}

double oracle_crb(const SlmProblem& p, const Support& K) {
    if (K.empty()) return 0.0;
    Matrix hk(p.rows(), static_cast<Index>(K.size()));
    for (std::size_t j = 0; j < K.size(); ++j) hk.col(static_cast<Index>(j)) = p.H().col(K[j]);
    if (numerical_rank(hk) < hk.cols()) throw std::invalid_argument("oracle_crb: H_K has dependent columns");
    const Matrix gram = hk.transpose() * hk;
    return p.sigma2() * gram.ldlt().solve(Matrix::Identity(gram.rows(), gram.cols())).trace();
}

// ---- configuration --------------------------------------------------------------

namespace {

// A JSON value together with its pointer path for diagnostics.
struct Node {
    const json& j;
    std::string path;

    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path.empty() ? "/" : path, what); }

    Node at(const std::string& key) const { return {j.at(key), path + "/" + key}; }
    Node at(std::size_t i) const { return {j.at(i), path + "/" + std::to_string(i)}; }
    bool has(const std::string& key) const { return j.contains(key); }

    void require_object(const std::set<std::string>& allowed) const {
        if (!j.is_object()) fail("expected an object");
        for (const auto& [k, v] : j.items())
            if (!allowed.count(k)) fail("unknown key '" + k + "'");
    }
    void require_array() const {
        if (!j.is_array()) fail("expected an array");
    }
    double number() const {
        if (!j.is_number()) fail("expected a number");
        const double v = j.get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }
    std::int64_t integer() const {
        if (!j.is_number_integer()) fail("expected an integer");
        return j.get<std::int64_t>();
    }
    std::uint64_t unsigned_integer() const {
        if (j.is_number_unsigned()) return j.get<std::uint64_t>();
        if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
        fail("expected a nonnegative integer");
    }
    std::string string() const {
        if (!j.is_string()) fail("expected a string");
        return j.get<std::string>();
    }
    std::string choice(const std::set<std::string>& options) const {
        const std::string s = string();
        if (!options.count(s)) {
            std::string list;
            for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
            fail("'" + s + "' is not one of: " + list);
        }
        return s;
    }

    double number_or(const std::string& key, double fallback) const { return has(key) ? at(key).number() : fallback; }
    std::int64_t integer_or(const std::string& key, std::int64_t fallback) const {
        return has(key) ? at(key).integer() : fallback;
    }
    std::string string_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? at(key).string() : fallback;
    }
};

Matrix parse_matrix(const Node& m) {
    m.require_object({"source", "M", "L", "theta_start", "theta_step", "theta_unit", "n", "N", "seed", "rows"});
    const std::string source = m.at("source").choice({"fourier", "identity", "gaussian", "rows"});
    if (source == "fourier") {
        ThetaRule rule;
        rule.start = m.number_or("theta_start", rule.start);
        rule.step = m.number_or("theta_step", rule.step);
        if (m.has("theta_unit"))
            rule.unit = m.at("theta_unit").choice({"radians", "cycles"}) == "cycles" ? FrequencyUnit::cycles
                                                                                     : FrequencyUnit::radians;
        const auto M = m.at("M").integer();
        const auto L = m.at("L").integer();
        if (M < 1) m.at("M").fail("must be positive");
        if (L < 1) m.at("L").fail("must be positive");
        return build_fourier_H(M, L, rule);
    }
    if (source == "identity") {
        const auto n = m.at("n").integer();
        if (n < 1) m.at("n").fail("must be positive");
        return Matrix::Identity(n, n);
    }
    if (source == "gaussian") {
        const auto rows = m.at("M").integer();
        const auto cols = m.at("N").integer();
        if (rows < 1) m.at("M").fail("must be positive");
        if (cols < 1) m.at("N").fail("must be positive");
        RandomStream rng(m.has("seed") ? m.at("seed").unsigned_integer() : 0, 0);
        Matrix h(rows, cols);
        for (Index c = 0; c < cols; ++c) {
            for (Index r = 0; r < rows; ++r) h(r, c) = rng.normal();
            h.col(c).normalize();
        }
        return h;
    }
    const Node rows = m.at("rows");
    rows.require_array();
    if (rows.j.empty()) rows.fail("needs at least one row");
    const std::size_t ncols = rows.j.at(0).is_array() ? rows.j.at(0).size() : 0;
    if (ncols == 0) rows.at(0).fail("expected a nonempty array of numbers");
    Matrix h(static_cast<Index>(rows.j.size()), static_cast<Index>(ncols));
    for (std::size_t r = 0; r < rows.j.size(); ++r) {
        const Node row = rows.at(r);
        row.require_array();
        if (row.j.size() != ncols) row.fail("ragged matrix row");
        for (std::size_t c = 0; c < ncols; ++c) h(static_cast<Index>(r), static_cast<Index>(c)) = row.at(c).number();
    }
    return h;
}

const std::set<std::string> kSlmEstimators{"ls", "omp"};
const std::set<std::string> kSsnmEstimators{"ls", "omp", "ht", "ml"};
const std::set<std::string> kSdpcmEstimators{"sdpcm_unbiased", "sdpcm_ht", "sdpcm_ml"};
const std::set<std::string> kSlmBounds{"oracle_crb", "crb", "rkhs_a", "rkhs_b"};
const std::set<std::string> kSsnmBounds{"oracle_crb", "crb", "rkhs_a", "rkhs_b", "hcrb", "barankin"};
const std::set<std::string> kSdpcmBounds{"spectrum", "sdpcm_projection"};

bool is_diagonal(const EstimatorSpec& e) { return e.type == "ls" || e.type == "ht"; }

DiagonalEstimator diagonal_of(const EstimatorSpec& e) {
    return e.type == "ht" ? DiagonalEstimator::ht(e.threshold) : DiagonalEstimator::ls();
}

void check_column_name(const Node& n, const std::string& name) {
    if (name.empty()) n.fail("name must not be empty");
    for (char c : name)
        if (c == ',' || c == '"' || c == '\n' || c == '\r') n.fail("name must not contain commas, quotes or newlines");
}

std::string format_number(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

EstimatorSpec parse_estimator(const Node& n, const ExperimentConfig& cfg) {
    n.require_object({"name", "type", "threshold", "iterations", "variance", "gradient", "fd_step"});
    EstimatorSpec e;
    const auto& allowed = cfg.family == "sdpcm" ? kSdpcmEstimators
                          : cfg.family == "ssnm" ? kSsnmEstimators
                                                 : kSlmEstimators;
    e.type = n.at("type").choice(allowed);
    const bool thresholded = e.type == "ht" || e.type == "sdpcm_ht";
    if (thresholded) {
        e.threshold = n.at("threshold").number();
        if (e.threshold < 0.0) n.at("threshold").fail("must be >= 0");
    } else if (n.has("threshold")) {
        n.at("threshold").fail("only thresholding estimators take a threshold");
    }
    if (e.type == "omp") {
        e.iterations = static_cast<int>(n.integer_or("iterations", cfg.sparsity()));
        if (e.iterations < 1 || e.iterations > cfg.dim()) n.at("iterations").fail("must lie in [1, N]");
    } else if (n.has("iterations")) {
        n.at("iterations").fail("only omp takes iterations");
    }
    const bool quad_ok = cfg.family == "ssnm" && is_diagonal(e);
    e.variance = n.has("variance") ? n.at("variance").choice({"mc", "quadrature", "none"}) : (quad_ok ? "quadrature" : "mc");
    if (e.variance == "quadrature" && !quad_ok) n.at("variance").fail("quadrature needs ls or ht in the SSNM");
    const bool fd_default = e.type == "ml" || e.type == "sdpcm_ml";
    e.gradient = n.has("gradient") ? n.at("gradient").choice({"score", "fd", "quadrature"})
                                   : (quad_ok ? "quadrature" : fd_default ? "fd" : "score");
    if (e.gradient == "quadrature" && !quad_ok) n.at("gradient").fail("quadrature needs ls or ht in the SSNM");
    e.fd_step = n.number_or("fd_step", kDefaultFdStep);
    if (!(e.fd_step > 0.0)) n.at("fd_step").fail("must be positive");
    e.name = n.has("name") ? n.at("name").string()
                           : (thresholded ? e.type + "_T" + format_number(e.threshold) : e.type);
    check_column_name(n, e.name);
    return e;
}

BoundSpec parse_bound(const Node& n, const ExperimentConfig& cfg) {
    n.require_object({"name", "type", "estimator", "index_set"});
    BoundSpec b;
    const auto& allowed = cfg.family == "sdpcm" ? kSdpcmBounds : cfg.family == "ssnm" ? kSsnmBounds : kSlmBounds;
    b.type = n.at("type").choice(allowed);
    if (n.has("estimator")) {
        b.estimator = n.at("estimator").string();
        const auto it = std::find_if(cfg.estimators.begin(), cfg.estimators.end(),
                                     [&](const EstimatorSpec& e) { return e.name == b.estimator; });
        if (it == cfg.estimators.end()) n.at("estimator").fail("no estimator named '" + b.estimator + "'");
        if (b.type == "oracle_crb" || b.type == "hcrb" || b.type == "spectrum")
            n.at("estimator").fail(b.type + " is a bound for unbiased estimation and takes no estimator");
        if (b.type == "barankin" && !is_diagonal(*it))
            n.at("estimator").fail("barankin needs a diagonal estimator (ls or ht)");
    } else if (b.type == "barankin") {
        n.fail("barankin needs an estimator");
    }
    if (n.has("index_set")) {
        const std::string rule = n.at("index_set").choice({"singleton", "swap_smallest"});
        b.index_set = parse_index_set_rule(rule);
    }
    if (b.type == "sdpcm_projection" && static_cast<int>(cfg.support.size()) != cfg.sparsity())
        n.fail("sdpcm_projection needs exactly S support indices");
    b.name = n.has("name") ? n.at("name").string() : (b.estimator.empty() ? b.type : b.type + "_" + b.estimator);
    check_column_name(n, b.name);
    return b;
}

std::vector<double> parse_snr(const Node& n) {
    std::vector<double> out;
    if (n.j.is_object() && n.has("values")) {
        n.require_object({"values"});
        const Node v = n.at("values");
        v.require_array();
        for (std::size_t i = 0; i < v.j.size(); ++i) out.push_back(v.at(i).number());
    } else {
        n.require_object({"log_from", "log_to", "points"});
        const double a = n.at("log_from").number(), b = n.at("log_to").number();
        const auto pts = n.at("points").integer();
        if (!(a > 0.0)) n.at("log_from").fail("must be positive");
        if (!(b >= a)) n.at("log_to").fail("must be >= log_from");
        if (pts < 1) n.at("points").fail("must be positive");
        for (std::int64_t i = 0; i < pts; ++i) {
            const double t = pts == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(pts - 1);
            out.push_back(std::pow(10.0, std::log10(a) + t * (std::log10(b) - std::log10(a))));
        }
    }
    if (out.empty()) n.fail("SNR grid is empty");
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(out[i] > 0.0)) n.fail("SNR values must be positive (entry " + std::to_string(i) + ")");
    return out;
}

}  // namespace

Index ExperimentConfig::dim() const { return slm ? slm->dim() : sdpcm->dim(); }
double ExperimentConfig::sigma2() const { return slm ? slm->sigma2() : sdpcm->sigma2(); }
int ExperimentConfig::sparsity() const { return slm ? slm->sparsity() : sdpcm->sparsity(); }

Vector ExperimentConfig::parameter_at(double snr) const {
    const double scale = scaling == Scaling::amplitude ? std::sqrt(snr * sigma2()) : snr * sigma2();
    Vector x = Vector::Zero(dim());
    for (Index k : support) x(k) = scale;
    return x;
}

double ExperimentConfig::normalizer_at(double snr) const {
    if (normalization == Normalization::none) return 1.0;
    return 2.0 * (snr + 1.0) * (snr + 1.0) * sigma2() * sigma2();
}

ExperimentConfig parse_config(const json& doc) {
    const Node root{doc, ""};
    root.require_object({"schema_version", "name", "model", "support", "snr", "scaling", "normalization", "estimators",
                         "bounds", "mc", "output"});
    if (root.at("schema_version").integer() != kConfigSchemaVersion)
        root.at("schema_version").fail("unsupported schema version (expected " +
                                       std::to_string(kConfigSchemaVersion) + ")");
    ExperimentConfig cfg;
    cfg.name = root.string_or("name", "experiment");
    check_column_name(root, cfg.name);

    const Node model = root.at("model");
    model.require_object({"family", "sigma2", "sparsity", "n", "matrix", "ranks", "rank"});
    cfg.family = model.at("family").choice({"slm", "ssnm", "sdpcm"});
    const double sigma2 = model.at("sigma2").number();
    if (!(sigma2 > 0.0)) model.at("sigma2").fail("must be positive");
    const auto sparsity = model.at("sparsity").integer();
    try {
        if (cfg.family == "ssnm") {
            if (model.has("matrix")) model.at("matrix").fail("the SSNM has H = I; use family slm for a matrix");
            const auto n = model.at("n").integer();
            if (n < 1) model.at("n").fail("must be positive");
            if (sparsity < 1 || sparsity > n) model.at("sparsity").fail("must lie in [1, N]");
            cfg.slm.emplace(SlmProblem::ssnm(n, sigma2, static_cast<int>(sparsity)));
        } else if (cfg.family == "slm") {
            const Matrix h = parse_matrix(model.at("matrix"));
            if (sparsity < 1 || sparsity > h.cols()) model.at("sparsity").fail("must lie in [1, N]");
            cfg.slm.emplace(h, sigma2, static_cast<int>(sparsity));
        } else {
            std::vector<int> ranks;
            if (model.has("ranks")) {
                const Node r = model.at("ranks");
                r.require_array();
                for (std::size_t i = 0; i < r.j.size(); ++i) {
                    const auto v = r.at(i).integer();
                    if (v < 1) r.at(i).fail("ranks must be >= 1");
                    ranks.push_back(static_cast<int>(v));
                }
            } else {
                const auto n = model.at("n").integer();
                const auto rank = model.integer_or("rank", 1);
                if (n < 1) model.at("n").fail("must be positive");
                if (rank < 1) model.at("rank").fail("must be >= 1");
                ranks.assign(static_cast<std::size_t>(n), static_cast<int>(rank));
            }
            if (ranks.empty()) model.fail("needs at least one group");
            if (sparsity < 1 || sparsity > static_cast<std::int64_t>(ranks.size()))
                model.at("sparsity").fail("must lie in [1, N]");
            cfg.sdpcm.emplace(SdpcmProblem::coordinate(ranks, sigma2, static_cast<int>(sparsity)));
        }
    } catch (const std::invalid_argument& e) {
        model.fail(e.what());
    }

    if (root.has("support")) {
        const Node s = root.at("support");
        s.require_array();
        for (std::size_t i = 0; i < s.j.size(); ++i) {
            const auto v = s.at(i).integer();
            if (v < 1 || v > cfg.dim())
                s.at(i).fail("support index " + std::to_string(v) + " outside [1, " + std::to_string(cfg.dim()) + "]");
            cfg.support.push_back(static_cast<Index>(v - 1));
        }
        std::sort(cfg.support.begin(), cfg.support.end());
        if (std::adjacent_find(cfg.support.begin(), cfg.support.end()) != cfg.support.end())
            s.fail("support indices must be distinct");
        if (static_cast<int>(cfg.support.size()) > cfg.sparsity()) s.fail("more than S support indices");
    } else {
        for (Index k = 0; k < cfg.sparsity(); ++k) cfg.support.push_back(k);
    }

    cfg.snr = parse_snr(root.at("snr"));
    const std::string natural = cfg.family == "sdpcm" ? "power" : "amplitude";
    const std::string scaling = root.has("scaling") ? root.at("scaling").choice({"amplitude", "power"}) : natural;
    if (scaling != natural)
        root.at("scaling").fail("family " + cfg.family + " scales the parameter by " + natural + ", not " + scaling);
    cfg.scaling = scaling == "power" ? Scaling::power : Scaling::amplitude;
    if (root.has("normalization")) {
        const std::string norm = root.at("normalization").choice({"none", "sdpcm_oracle"});
        if (norm == "sdpcm_oracle" && cfg.family != "sdpcm")
            root.at("normalization").fail("sdpcm_oracle normalization applies to the sdpcm family only");
        cfg.normalization = norm == "sdpcm_oracle" ? Normalization::sdpcm_oracle : Normalization::none;
    }

    std::set<std::string> names;
    if (root.has("estimators")) {
        const Node es = root.at("estimators");
        es.require_array();
        for (std::size_t i = 0; i < es.j.size(); ++i) {
            cfg.estimators.push_back(parse_estimator(es.at(i), cfg));
            if (!names.insert(cfg.estimators.back().name).second) es.at(i).fail("duplicate estimator name");
        }
    }
    names.clear();
    if (root.has("bounds")) {
        const Node bs = root.at("bounds");
        bs.require_array();
        for (std::size_t i = 0; i < bs.j.size(); ++i) {
            cfg.bounds.push_back(parse_bound(bs.at(i), cfg));
            if (!names.insert(cfg.bounds.back().name).second) bs.at(i).fail("duplicate bound name");
        }
    }

    if (root.has("mc")) {
        const Node mc = root.at("mc");
        mc.require_object({"trials", "seed", "workers"});
        cfg.mc.trials = mc.integer_or("trials", cfg.mc.trials);
        if (mc.has("seed")) cfg.mc.seed = mc.at("seed").unsigned_integer();
        cfg.mc.workers = static_cast<int>(mc.integer_or("workers", cfg.mc.workers));
        if (cfg.mc.trials < 2) mc.at("trials").fail("must be at least 2");
        if (cfg.mc.workers < 1) mc.at("workers").fail("must be positive");
    }
    cfg.csv_name = cfg.name + ".csv";
    cfg.svg_name = cfg.name + ".svg";
    if (root.has("output")) {
        const Node out = root.at("output");
        out.require_object({"csv", "svg"});
        cfg.csv_name = out.string_or("csv", cfg.csv_name);
        cfg.svg_name = out.string_or("svg", cfg.svg_name);
    }
    cfg.document = doc;
    return cfg;
}

json parse_json_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col),
                          "JSON syntax error");
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(parse_json_text(buf.str()));
}

json apply_overrides(json doc, const json& overrides) {
    if (overrides.is_null()) return doc;
    const Node o{overrides, "overrides"};
    o.require_object({"trials", "seed", "workers", "snr"});
    if (!doc.contains("mc")) doc["mc"] = json::object();
    if (o.has("trials")) doc["mc"]["trials"] = o.at("trials").integer();
    if (o.has("seed")) doc["mc"]["seed"] = o.at("seed").unsigned_integer();
    if (o.has("workers")) doc["mc"]["workers"] = o.at("workers").integer();
    if (o.has("snr")) doc["snr"] = json{{"values", o.at("snr").j}};
    return doc;
}

// ---- presets --------------------------------------------------------------------------

std::vector<std::string> preset_ids() { return {"fig5_2", "fig5_3", "fig5_4", "fig6_1"}; }

json preset_config(const std::string& id) {
    const json mc_default = {{"trials", 10000}, {"seed", 20240601}, {"workers", 1}};
    if (id == "fig5_2") {
        return {{"schema_version", kConfigSchemaVersion},
                {"name", id},
                {"model",
                 {{"family", "slm"},
                  {"sigma2", 1.0},
                  {"sparsity", 4},
                  {"matrix",
                   {{"source", "fourier"}, {"M", 128}, {"L", 8}, {"theta_start", 0.2}, {"theta_step", 3.9e-3},
                    {"theta_unit", "cycles"}}}}},
                // cos/sin pairs of the 3rd and 6th frequency
                {"support", {3, 6, 11, 14}},
                {"snr", {{"log_from", 0.01}, {"log_to", 1e4}, {"points", 25}}},
                {"estimators", {{{"name", "omp"}, {"type", "omp"}, {"iterations", 4}, {"gradient", "score"}}}},
                {"bounds",
                 {{{"name", "oracle_crb"}, {"type", "oracle_crb"}},
                  {{"name", "omp_a"}, {"type", "rkhs_a"}, {"estimator", "omp"}, {"index_set", "singleton"}},
                  {{"name", "omp_b"}, {"type", "rkhs_b"}, {"estimator", "omp"}, {"index_set", "singleton"}},
                  {{"name", "omp_c"}, {"type", "crb"}, {"estimator", "omp"}}}},
                {"mc", {{"trials", 5000}, {"seed", 20240602}, {"workers", 1}}}};
    }
    if (id == "fig5_3") {
        json estimators = {{{"name", "ml"}, {"type", "ml"}, {"gradient", "fd"}, {"fd_step", 1e-2}}};
        json bounds = {{{"name", "ml_a"}, {"type", "rkhs_a"}, {"estimator", "ml"}},
                       {{"name", "ml_b"}, {"type", "rkhs_b"}, {"estimator", "ml"}}};
        for (int T : {1, 2, 3, 4}) {
            const std::string name = "ht_T" + std::to_string(T);
            estimators.push_back({{"name", name}, {"type", "ht"}, {"threshold", T}});
            bounds.push_back({{"name", name + "_a"}, {"type", "rkhs_a"}, {"estimator", name}});
            bounds.push_back({{"name", name + "_b"}, {"type", "rkhs_b"}, {"estimator", name}});
        }
        return {{"schema_version", kConfigSchemaVersion},
                {"name", id},
                {"model", {{"family", "ssnm"}, {"n", 50}, {"sigma2", 1.0}, {"sparsity", 5}}},
                {"snr", {{"log_from", 0.01}, {"log_to", 100.0}, {"points", 25}}},
                {"estimators", estimators},
                {"bounds", bounds},
                {"mc", mc_default}};
    }
    if (id == "fig5_4") {
        json estimators = json::array(), bounds = json::array();
        for (int T : {0, 1, 2, 4}) {
            const std::string name = "ht_T" + std::to_string(T);
            estimators.push_back({{"name", name}, {"type", "ht"}, {"threshold", T}});
            bounds.push_back({{"name", name + "_barankin"}, {"type", "barankin"}, {"estimator", name}});
        }
        return {{"schema_version", kConfigSchemaVersion},
                {"name", id},
                {"model", {{"family", "ssnm"}, {"n", 50}, {"sigma2", 1.0}, {"sparsity", 5}}},
                {"snr", {{"log_from", 0.01}, {"log_to", 100.0}, {"points", 40}}},
                {"estimators", estimators},
                {"bounds", bounds},
                {"mc", mc_default}};
    }
    if (id == "fig6_1") {
        json estimators = {{{"name", "ml"}, {"type", "sdpcm_ml"}, {"gradient", "fd"}, {"fd_step", 1e-2}}};
        json bounds = {{{"name", "ml"}, {"type", "sdpcm_projection"}, {"estimator", "ml"}}};
        for (int T : {1, 2}) {
            const std::string name = "ht_T" + std::to_string(T);
            estimators.push_back({{"name", name}, {"type", "sdpcm_ht"}, {"threshold", T}, {"gradient", "score"}});
            bounds.push_back({{"name", name}, {"type", "sdpcm_projection"}, {"estimator", name}});
        }
        bounds.push_back({{"name", "unbiased"}, {"type", "spectrum"}});
        return {{"schema_version", kConfigSchemaVersion},
                {"name", id},
                {"model", {{"family", "sdpcm"}, {"n", 50}, {"rank", 1}, {"sigma2", 1.0}, {"sparsity", 5}}},
                {"snr", {{"log_from", 0.01}, {"log_to", 100.0}, {"points", 40}}},
                {"normalization", "sdpcm_oracle"},
                {"estimators", estimators},
                {"bounds", bounds},
                {"mc", mc_default}};
    }
    throw ConfigError("figure", "unknown figure id '" + id + "'");
}

// ---- sweep --------------------------------------------------------------------------

namespace {

using AnchorKey = std::vector<double>;

AnchorKey key_of(const Vector& x) { return {x.data(), x.data() + x.size()}; }

// Mean and gradient (column k = grad of m_k) of one estimator at one point.
struct MeanInfo {
    Vector mean;
    Matrix grad;
};

EstimatorFn make_estimator(const ExperimentConfig& cfg, const EstimatorSpec& e) {
    const int S = cfg.sparsity();
    if (cfg.sdpcm) {
        const SdpcmProblem& p = *cfg.sdpcm;
        if (e.type == "sdpcm_unbiased") return [&p](const Vector& y) { return sdpcm_unbiased(p, y); };
        if (e.type == "sdpcm_ht") return [&p, t = e.threshold](const Vector& y) { return sdpcm_ht(p, y, t); };
        return [&p, S](const Vector& y) { return sdpcm_ml(p, y, S); };
    }
    const SlmProblem& p = *cfg.slm;
    if (e.type == "ls") return [&p](const Vector& y) { return ls(p, y); };
    if (e.type == "omp") return [&p, it = e.iterations](const Vector& y) { return omp(p, y, it); };
    if (e.type == "ht") return [t = e.threshold](const Vector& y) { return ht_ssnm(y, t); };
    return [S](const Vector& y) { return ml_ssnm(y, S); };
}

SimModel sim_model(const ExperimentConfig& cfg) { return cfg.slm ? make_model(*cfg.slm) : make_model(*cfg.sdpcm); }

// Evaluation state for one SNR point.
class PointEvaluator {
public:
    PointEvaluator(const ExperimentConfig& cfg, std::size_t index)
        : cfg_(cfg), snr_(cfg.snr[index]), x0_(cfg.parameter_at(snr_)),
          seed_(mix64(cfg.mc.seed ^ mix64(static_cast<std::uint64_t>(index) + 1))), model_(sim_model(cfg)) {
        for (const auto& e : cfg.estimators) estimators_.push_back(make_estimator(cfg, e));
        requests_.resize(cfg.estimators.size());
        cache_.resize(cfg.estimators.size());
        // finite differences need every direction at an anchor before the first evaluation there
        for (const auto& b : cfg.bounds) plan(b, estimator_index(b));
    }

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] double snr() const { return snr_; }

    std::pair<double, double> variance(std::size_t e) {
        const EstimatorSpec& spec = cfg_.estimators[e];
        if (spec.variance == "quadrature") {
            double v = 0.0;
            for (Index k = 0; k < x0_.size(); ++k) v += diag_moments(spec, x0_(k)).second;
            return {v, 0.0};
        }
        const auto r = mc_moments(estimators_[e], model_, x0_, mc_config(0));
        return {r.variance_total, std::sqrt(r.variance_stderr.squaredNorm())};
    }

    double bound(const BoundSpec& b, int& clamped) {
        const int e = estimator_index(b);
        if (b.type == "oracle_crb") return oracle_crb(*cfg_.slm, support_of(x0_));
        double total = 0.0;
        for (Index k = 0; k < x0_.size(); ++k) {
            try {
                total += component_bound(b, e, k);
            } catch (const std::domain_error&) {
                if (e < 0) throw;  // exact mean data cannot be inconsistent
                ++clamped;
            }
        }
        return total;
    }

private:
    McConfig mc_config(std::uint64_t salt) const {
        McConfig c;
        c.trials = cfg_.mc.trials;
        c.seed = mix64(seed_ + salt);
        c.workers = 1;
        return c;
    }

    int estimator_index(const BoundSpec& b) const {
        for (std::size_t i = 0; i < cfg_.estimators.size(); ++i)
            if (cfg_.estimators[i].name == b.estimator) return static_cast<int>(i);
        return -1;
    }

    std::pair<double, double> diag_moments(const EstimatorSpec& spec, double xk) {
        auto& slot = diag_cache_[{spec.name, xk}];
        if (!slot) slot = diag_mean_var_quadrature(diagonal_of(spec), xk, cfg_.slm->sigma());
        return *slot;
    }
    double diag_slope(const EstimatorSpec& spec, double xk) {
        auto& slot = slope_cache_[{spec.name, xk}];
        if (!slot) slot = diag_mean_slope_quadrature(diagonal_of(spec), xk, cfg_.slm->sigma());
        return *slot;
    }

    // Anchor point and index set used for component k.
    std::pair<Vector, Support> anchor(const BoundSpec& b, Index k) const {
        const Support K = default_index_set(x0_, k, cfg_.sparsity(), b.index_set);
        if (b.type == "rkhs_a" || b.type == "rkhs_b") {
            // H x0 lies in the span of H_K, so the projection is x0 itself; skip the roundoff
            const Support supp = support_of(x0_);
            if (std::includes(K.begin(), K.end(), supp.begin(), supp.end())) return {x0_, K};
            return {tilde_x0(*cfg_.slm, x0_, K), K};
        }
        if (b.type == "sdpcm_projection") return {restrict_to(x0_, K), K};
        // crb: derivatives at x0, restricted to the support when it is full
        const Support supp = support_of(x0_);
        if (static_cast<int>(supp.size()) == cfg_.sparsity()) return {x0_, supp};
        Support all(static_cast<std::size_t>(x0_.size()));
        for (Index l = 0; l < x0_.size(); ++l) all[static_cast<std::size_t>(l)] = l;
        return {x0_, all};
    }

    void plan(const BoundSpec& b, int e) {
        if (e < 0 || b.type == "barankin" || b.type == "hcrb" || b.type == "spectrum") return;
        auto& req = requests_[static_cast<std::size_t>(e)];
        req[key_of(x0_)];
        for (Index k = 0; k < x0_.size(); ++k) {
            auto [a, K] = anchor(b, k);
            auto& dirs = req[key_of(a)];
            if (b.type == "sdpcm_projection")
                dirs.insert(k);
            else
                dirs.insert(K.begin(), K.end());
        }
    }

    const MeanInfo& info(int e, const Vector& x) {
        auto& cache = cache_[static_cast<std::size_t>(e)];
        const AnchorKey key = key_of(x);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        const EstimatorSpec& spec = cfg_.estimators[static_cast<std::size_t>(e)];
        const Index n = x.size();
        MeanInfo out;
        // common random numbers across anchors keep differences such as gamma(x~0)^2 - gamma(x0)^2 smooth
        const std::uint64_t salt = 1 + static_cast<std::uint64_t>(e);
        if (spec.gradient == "quadrature") {
            out.mean.resize(n);
            out.grad = Matrix::Zero(n, n);
            for (Index k = 0; k < n; ++k) {
                out.mean(k) = diag_moments(spec, x(k)).first;
                out.grad(k, k) = diag_slope(spec, x(k));
            }
        } else if (spec.gradient == "score") {
            const auto g = cfg_.slm ? mean_grad_slm_mc(estimators_[e], *cfg_.slm, x, mc_config(salt))
                                    : mean_grad_sdpcm_mc(estimators_[e], *cfg_.sdpcm, x, mc_config(salt));
            out.mean = g.mean;
            out.grad = g.partials;
        } else {
            const auto& req = requests_[static_cast<std::size_t>(e)];
            const auto it = req.find(key);
            std::vector<Index> dirs;
            if (it != req.end()) dirs.assign(it->second.begin(), it->second.end());
            if (dirs.empty()) {
                const auto r = mc_moments(estimators_[e], model_, x, mc_config(salt));
                out.mean = r.mean;
                out.grad = Matrix::Zero(n, r.mean.size());
            } else {
                const auto g = mean_grad_fd(estimators_[e], model_, x, spec.fd_step, mc_config(salt), dirs);
                out.mean = g.mean;
                out.grad = g.partials;
            }
        }
        return cache.emplace(key, std::move(out)).first->second;
    }

    double component_bound(const BoundSpec& b, int e, Index k) {
        const int c = static_cast<int>(k);
        if (b.type == "hcrb") return hcrb_ssnm(*cfg_.slm, x0_, k).value;
        if (b.type == "spectrum") return spectrum_bound(*cfg_.sdpcm, x0_, k).value;
        if (b.type == "barankin") {
            const auto& spec = cfg_.estimators[static_cast<std::size_t>(e)];
            const auto [m, v] = diag_moments(spec, x0_(k));
            return ssnm_barankin_from_estimator(v, m, x0_, k, cfg_.sparsity(), cfg_.slm->sigma()).value;
        }
        const auto [a, K] = anchor(b, k);
        if (b.type == "sdpcm_projection") {
            MultiIndex zero(static_cast<std::size_t>(x0_.size()), 0), first = zero;
            first[static_cast<std::size_t>(k)] = 1;
            Vector partials(2);
            double gamma0;
            if (e < 0) {
                partials << a(k), 1.0;
                gamma0 = x0_(k);
            } else {
                const MeanInfo& at_anchor = info(e, a);
                partials << at_anchor.mean(k), at_anchor.grad(k, k);
                gamma0 = info(e, x0_).mean(k);
            }
            return sdpcm_projection_bound(*cfg_.sdpcm, x0_, K, {zero, first}, partials, gamma0, c).value;
        }
        MeanModel mean = MeanModel::unbiased(k, x0_, a);
        if (e >= 0) {
            const MeanInfo& at_anchor = info(e, a);
            mean.gamma0 = info(e, x0_).mean(k);
            mean.gamma_at_anchor = at_anchor.mean(k);
            mean.grad = at_anchor.grad.col(k);
        }
        if (b.type == "crb") return crb_slm(*cfg_.slm, x0_, mean, c).value;
        if (b.type == "rkhs_a") return rkhs_bound_a(*cfg_.slm, x0_, K, mean, c).value;
        return rkhs_bound_b(*cfg_.slm, x0_, K, mean, c).value;
    }

    const ExperimentConfig& cfg_;
    double snr_;
    Vector x0_;
    std::uint64_t seed_;
    SimModel model_;
    std::vector<EstimatorFn> estimators_;
    std::vector<std::map<AnchorKey, std::set<Index>>> requests_;
    std::vector<std::map<AnchorKey, MeanInfo>> cache_;
    std::map<std::pair<std::string, double>, std::optional<std::pair<double, double>>> diag_cache_;
    std::map<std::pair<std::string, double>, std::optional<double>> slope_cache_;
};

}  // namespace

std::vector<std::string> SweepResult::header() const {
    std::vector<std::string> h{"snr_linear", "snr_db"};
    for (const auto& n : variance_names) {
        h.push_back("var:" + n);
        h.push_back("se:" + n);
    }
    for (const auto& n : bound_names) h.push_back("bound:" + n);
    h.push_back("normalizer");
    h.push_back("seed");
    return h;
}

SweepRow evaluate_point(const ExperimentConfig& cfg, std::size_t point_index, int* clamped) {
    if (point_index >= cfg.snr.size()) throw std::out_of_range("evaluate_point: SNR index out of range");
    PointEvaluator ev(cfg, point_index);
    SweepRow row;
    row.snr_linear = ev.snr();
    row.snr_db = 10.0 * std::log10(ev.snr());
    row.seed = ev.seed();
    row.normalizer = cfg.normalizer_at(ev.snr());
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        if (cfg.estimators[e].variance == "none") continue;
        const auto [v, se] = ev.variance(e);
        row.variance.push_back(v / row.normalizer);
        row.std_err.push_back(se / row.normalizer);
    }
    int local = 0;
    for (const auto& b : cfg.bounds) row.bound.push_back(ev.bound(b, local) / row.normalizer);
    if (clamped) *clamped += local;
    return row;
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
    SweepResult result;
    for (const auto& e : cfg.estimators)
        if (e.variance != "none") result.variance_names.push_back(e.name);
    for (const auto& b : cfg.bounds) result.bound_names.push_back(b.name);
    result.rows.resize(cfg.snr.size());
    std::vector<int> clamped(cfg.snr.size(), 0);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.snr.size()) return;
            try {
                result.rows[i] = evaluate_point(cfg, i, &clamped[i]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(cfg.snr.size());
                return;
            }
        }
    };
    const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.mc.workers), cfg.snr.size()));
    if (nthreads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (int c : clamped) result.clamped_components += c;
    return result;
}

// ---- CSV ------------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw std::runtime_error("csv line " + std::to_string(line) + ": not a number: '" + s + "'");
    return v;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_csv(const SweepResult& result, std::ostream& out) {
    const auto header = result.header();
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : result.rows) {
        if (row.variance.size() != result.variance_names.size() || row.std_err.size() != row.variance.size() ||
            row.bound.size() != result.bound_names.size())
            throw std::invalid_argument("write_csv: row does not match the column set");
        out << format_double(row.snr_linear) << ',' << format_double(row.snr_db);
        for (std::size_t i = 0; i < row.variance.size(); ++i)
            out << ',' << format_double(row.variance[i]) << ',' << format_double(row.std_err[i]);
        for (double b : row.bound) out << ',' << format_double(b);
        out << ',' << format_double(row.normalizer) << ',' << row.seed << '\n';
    }
}

void write_csv(const SweepResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_csv(result, out);
}

SweepResult read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv: missing header");
    const auto header = split_line(line);
    if (header.size() < 4 || header[0] != "snr_linear" || header[1] != "snr_db" ||
        header[header.size() - 2] != "normalizer" || header.back() != "seed")
        throw std::runtime_error("csv: header must start with snr_linear,snr_db and end with normalizer,seed");
    SweepResult result;
    std::size_t i = 2;
    while (i + 2 < header.size() && header[i].rfind("var:", 0) == 0) {
        const std::string name = header[i].substr(4);
        if (header[i + 1] != "se:" + name) throw std::runtime_error("csv: var:" + name + " must be followed by se:" + name);
        result.variance_names.push_back(name);
        i += 2;
    }
    for (; i + 2 < header.size(); ++i) {
        if (header[i].rfind("bound:", 0) != 0) throw std::runtime_error("csv: unexpected column '" + header[i] + "'");
        result.bound_names.push_back(header[i].substr(6));
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_line(line);
        if (f.size() != header.size())
            throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        SweepRow row;
        row.snr_linear = parse_double(f[0], lineno);
        row.snr_db = parse_double(f[1], lineno);
        std::size_t c = 2;
        for (std::size_t v = 0; v < result.variance_names.size(); ++v) {
            row.variance.push_back(parse_double(f[c++], lineno));
            row.std_err.push_back(parse_double(f[c++], lineno));
        }
        for (std::size_t b = 0; b < result.bound_names.size(); ++b) row.bound.push_back(parse_double(f[c++], lineno));
        row.normalizer = parse_double(f[c++], lineno);
        std::uint64_t seed = 0;
        const auto [ptr, ec] = std::from_chars(f[c].data(), f[c].data() + f[c].size(), seed);
        if (ec != std::errc() || ptr != f[c].data() + f[c].size())
            throw std::runtime_error("csv line " + std::to_string(lineno) + ": bad seed '" + f[c] + "'");
        row.seed = seed;
        result.rows.push_back(std::move(row));
    }
    return result;
}

SweepResult read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return read_csv(in);
}

FigureOutputs reproduce_figure(const std::string& id, const json& overrides, const std::filesystem::path& out_dir) {
    const json doc = apply_overrides(preset_config(id), overrides);
    const ExperimentConfig cfg = parse_config(doc);
    std::filesystem::create_directories(out_dir);
    FigureOutputs out;
    out.config = out_dir / (id + ".json");
    out.csv = out_dir / cfg.csv_name;
    out.svg = out_dir / cfg.svg_name;
    {
        std::ofstream f(out.config);
        if (!f) throw std::runtime_error("cannot write " + out.config.string());
        f << doc.dump(2) << '\n';
    }
    out.result = run_sweep(cfg);
    write_csv(out.result, out.csv);
    PlotStyle style;
    style.title = id;
    style.y_label = cfg.normalization == Normalization::none ? "variance" : "normalized variance";
    emit_plot(out.csv, out.svg, style);
    return out;
}

}  // namespace sparsemv
