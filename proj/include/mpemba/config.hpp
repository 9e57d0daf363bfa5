#pragma once

// Run-config documents: JSON <-> RunSpec, strict about unknown keys, plus the
// shipped presets.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mpemba.hpp"

namespace mpemba {

using RunConfig = RunSpec;

// A document holds one run, or several under "runs" sharing an output dir.
struct ConfigBundle {
    std::string name;
    std::vector<RunConfig> runs;
};

namespace detail {

inline std::string lower(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ValidationError("expected an object", path_.empty() ? "<root>" : path_);
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key)
    {
        seen_.insert(key);
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key, const T& fallback)
    {
        if (!has(key)) return fallback;
        return as<T>(raw(key), at(key));
    }

    template <class T>
    T required(const std::string& key)
    {
        if (!has(key)) throw ValidationError("missing required field", at(key));
        return as<T>(raw(key), at(key));
    }

    Reader child(const std::string& key)
    {
        static const json empty = json::object();
        if (!has(key)) return Reader(empty, at(key));
        return Reader(raw(key), at(key));
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ValidationError("unknown key", at(it.key()));
    }

    template <class T>
    static T as(const json& v, const std::string& path)
    {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ValidationError("expected a boolean", path);
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ValidationError("expected an integer", path);
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ValidationError("expected a number", path);
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ValidationError("expected a string", path);
        }
        return v.get<T>();
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& text, const std::vector<std::pair<std::string, E>>& table, const std::string& path)
{
    const std::string t = lower(text);
    std::string options;
    for (const auto& [name, value] : table) {
        if (t == name) return value;
        options += (options.empty() ? "" : ", ") + name;
    }
    throw ValidationError("unknown value '" + text + "' (expected one of: " + options + ")", path);
}

// Either an explicit list or {"start", "stop", "step"} (inclusive stop).
inline std::vector<double> parse_grid(const json& v, const std::string& path)
{
    std::vector<double> out;
    if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Reader::as<double>(v[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }
    Reader r(v, path);
    const double start = r.required<double>("start"), stop = r.required<double>("stop"), step = r.required<double>("step");
    r.finish();
    require(step > 0.0 && stop >= start, "grid needs step > 0 and stop >= start", path);
    const long n = std::lround(std::floor((stop - start) / step + 1e-9));
    require(n < 100000, "grid too large", path);
    // Rounded to 12 digits so grid points print as typed.
    for (long i = 0; i <= n; ++i) out.push_back(std::round((start + i * step) * 1e12) / 1e12);
    return out;
}

}  // namespace detail

inline RunConfig parse_run(const json& doc, const std::string& path = "")
{
    using detail::parse_enum;
    detail::Reader root(doc, path);
    RunConfig c;
    c.name = root.get<std::string>("name", c.name);

    auto m = root.child("model");
    c.model.family = parse_enum<Family>(m.required<std::string>("family"),
                                        {{"tfim", Family::tfim}, {"staggered_xxz", Family::staggered_xxz}}, m.at("family"));
    c.model.L = m.required<int>("L");
    c.model.boundary = parse_enum<Boundary>(m.get<std::string>("boundary", "periodic"),
                                            {{"periodic", Boundary::periodic}, {"open", Boundary::open}}, m.at("boundary"));
    c.model.J = m.required<double>("J");
    if (c.model.family == Family::tfim) {
        c.model.h_z = m.required<double>("h_z");
        c.model.h_x = m.get<double>("h_x", 0.0);
    } else {
        c.model.delta_even = m.required<double>("delta_even");
        c.model.delta_odd = m.required<double>("delta_odd");
    }
    m.finish();

    auto d = root.child("dissipator");
    c.dissipator.kind = parse_enum<DissipatorKind>(d.get<std::string>("kind", "hop"),
                                                   {{"hop", DissipatorKind::hop}, {"raise", DissipatorKind::raise}}, d.at("kind"));
    c.dissipator.gge_limit = d.get<bool>("gge_limit", !d.has("epsilon"));
    c.dissipator.epsilon = d.get<double>("epsilon", 0.0);
    c.dissipator.convention = parse_enum<SpinConvention>(
        d.get<std::string>("convention", "half"), {{"half", SpinConvention::half}, {"pauli", SpinConvention::pauli}}, d.at("convention"));
    d.finish();

    auto e = root.child("engine");
    c.engine.kind = parse_enum<EngineKind>(
        e.required<std::string>("kind"),
        {{"gge_flow", EngineKind::gge_flow}, {"exact", EngineKind::exact}, {"spectral", EngineKind::spectral}}, e.at("kind"));
    c.engine.method = parse_enum<PropagationMethod>(e.get<std::string>("propagation", "krylov"),
                                                    {{"krylov", PropagationMethod::krylov}, {"rk45", PropagationMethod::rk45}},
                                                    e.at("propagation"));
    c.engine.max_exact_sites = e.get<int>("max_exact_sites", c.engine.max_exact_sites);
    c.engine.max_spectral_sites = e.get<int>("max_spectral_sites", c.engine.max_spectral_sites);
    e.finish();

    auto x = root.child("experiment");
    c.experiment.kind = parse_enum<ExperimentKind>(x.required<std::string>("kind"),
                                                   {{"trajectory", ExperimentKind::trajectory},
                                                    {"crossing", ExperimentKind::crossing},
                                                    {"scan_t", ExperimentKind::scan_T},
                                                    {"scan_ell", ExperimentKind::scan_ell},
                                                    {"landscape", ExperimentKind::landscape},
                                                    {"observable", ExperimentKind::observable}},
                                                   x.at("kind"));
    if (!x.has("betas")) throw ValidationError("missing required field", x.at("betas"));
    c.experiment.betas = detail::parse_grid(x.raw("betas"), x.at("betas"));
    if (x.has("mus")) c.experiment.mus = detail::parse_grid(x.raw("mus"), x.at("mus"));
    c.experiment.ell = x.get<int>("ell", c.experiment.ell);
    if (x.has("ells")) {
        const json& v = x.raw("ells");
        if (!v.is_array()) throw ValidationError("expected an array of integers", x.at("ells"));
        for (std::size_t i = 0; i < v.size(); ++i)
            c.experiment.ells.push_back(detail::Reader::as<int>(v[i], x.at("ells") + "[" + std::to_string(i) + "]"));
    }
    c.experiment.distance = parse_enum<DistanceKind>(
        x.get<std::string>("distance", "normalized"),
        {{"normalized", DistanceKind::normalized}, {"trace", DistanceKind::trace}, {"frobenius", DistanceKind::frobenius}},
        x.at("distance"));
    c.experiment.probe_time = x.get<double>("probe_time", c.experiment.probe_time);
    c.experiment.slow_modes = x.get<int>("slow_modes", c.experiment.slow_modes);
    x.finish();

    auto n = root.child("numerics");
    auto& nu = c.numerics;
    nu.t_end = n.get<double>("t_end", nu.t_end);
    nu.sample_step = n.get<double>("sample_step", nu.sample_step);
    nu.rtol = n.get<double>("rtol", nu.rtol);
    nu.atol = n.get<double>("atol", nu.atol);
    nu.crossing_guard = n.get<double>("crossing_guard", nu.crossing_guard);
    nu.steady_tol = n.get<double>("steady_tol", nu.steady_tol);
    nu.steady_horizon = n.get<double>("steady_horizon", nu.steady_horizon);
    n.finish();

    auto o = root.child("output");
    c.output.dir = o.get<std::string>("dir", c.output.dir);
    o.finish();
    root.finish();

    // Rate fields only mean something away from the limit.
    if (c.engine.kind == EngineKind::gge_flow) c.dissipator.gge_limit = true;
    if (c.dissipator.gge_limit && c.engine.kind != EngineKind::spectral) c.dissipator.epsilon = 0.0;
    if (c.engine.kind == EngineKind::spectral) c.dissipator.gge_limit = false;
    c.validate();
    return c;
}

// Effective config: every field explicit, so re-parsing reproduces the spec.
inline json emit_run(const RunConfig& c)
{
    json j;
    j["name"] = c.name;
    json m;
    m["family"] = detail::lower(to_string(c.model.family));
    m["L"] = c.model.L;
    m["boundary"] = detail::lower(to_string(c.model.boundary));
    m["J"] = c.model.J;
    if (c.model.family == Family::tfim) {
        m["h_z"] = c.model.h_z;
        m["h_x"] = c.model.h_x;
    } else {
        m["delta_even"] = c.model.delta_even;
        m["delta_odd"] = c.model.delta_odd;
    }
    j["model"] = m;
    j["dissipator"] = {{"kind", to_string(c.dissipator.kind)},
                       {"epsilon", c.dissipator.epsilon},
                       {"gge_limit", c.dissipator.gge_limit},
                       {"convention", to_string(c.dissipator.convention)}};
    j["engine"] = {{"kind", to_string(c.engine.kind)},
                   {"propagation", to_string(c.engine.method)},
                   {"max_exact_sites", c.engine.max_exact_sites},
                   {"max_spectral_sites", c.engine.max_spectral_sites}};
    json x;
    x["kind"] = to_string(c.experiment.kind);
    x["betas"] = c.experiment.betas;
    x["mus"] = c.experiment.mus;
    x["ell"] = c.experiment.ell;
    x["ells"] = c.experiment.ells;
    x["distance"] = to_string(c.experiment.distance);
    x["probe_time"] = c.experiment.probe_time;
    x["slow_modes"] = c.experiment.slow_modes;
    j["experiment"] = x;
    const auto& nu = c.numerics;
    j["numerics"] = {{"t_end", nu.t_end},
                     {"sample_step", nu.sample_step},
                     {"rtol", nu.rtol},
                     {"atol", nu.atol},
                     {"crossing_guard", nu.crossing_guard},
                     {"steady_tol", nu.steady_tol},
                     {"steady_horizon", nu.steady_horizon}};
    j["output"] = {{"dir", c.output.dir}};
    return j;
}

inline ConfigBundle parse_config(const json& doc)
{
    ConfigBundle b;
    if (doc.is_object() && doc.contains("runs")) {
        detail::Reader r(doc, "");
        b.name = r.get<std::string>("name", "bundle");
        const json& runs = r.raw("runs");
        r.finish();
        if (!runs.is_array() || runs.empty()) throw ValidationError("expected a nonempty array of runs", "runs");
        std::set<std::string> names;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            b.runs.push_back(parse_run(runs[i], "runs[" + std::to_string(i) + "]"));
            if (!names.insert(b.runs.back().name).second)
                throw ValidationError("duplicate run name '" + b.runs.back().name + "'", "runs[" + std::to_string(i) + "].name");
        }
    } else {
        b.runs.push_back(parse_run(doc));
        b.name = b.runs.front().name;
    }
    return b;
}

inline ConfigBundle parse_config(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what(), "<document>");
    }
    return parse_config(doc);
}

inline json emit_config(const ConfigBundle& b)
{
    if (b.runs.size() == 1 && b.runs.front().name == b.name) return emit_run(b.runs.front());
    json runs = json::array();
    for (const auto& r : b.runs) runs.push_back(emit_run(r));
    return {{"name", b.name}, {"runs", runs}};
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return emit_run(a) == emit_run(b); }

// ---------------------------------------------------------------------------
// Presets. Dense presets carry desk-scale chain lengths.

inline const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"fig3b", "fig3c-desk", "fig3d", "fig4a-desk", "em1", "em2", "em3"};
    return names;
}

inline json preset_document(const std::string& name)
{
    const json tfim_int = {{"family", "tfim"}, {"L", 400}, {"J", 0.75}, {"h_z", 1.0}, {"h_x", 0.0}, {"boundary", "periodic"}};
    if (name == "fig3b")
        return {{"name", "fig3b"},
                {"model", tfim_int},
                {"dissipator", {{"kind", "hop"}, {"gge_limit", true}}},
                {"engine", {{"kind", "gge_flow"}}},
                {"experiment", {{"kind", "crossing"}, {"betas", {0.0, 0.15}}, {"ell", 2}}},
                {"numerics", {{"t_end", 20.0}, {"sample_step", 0.05}}}};
    if (name == "fig3d")
        return {{"name", "fig3d"},
                {"model", tfim_int},
                {"dissipator", {{"kind", "hop"}, {"gge_limit", true}}},
                {"engine", {{"kind", "gge_flow"}}},
                {"experiment", {{"kind", "scan_ell"}, {"betas", {0.0, 0.15}}, {"ells", {2, 4, 6, 8, 10, 14, 20, 28, 40}}}},
                {"numerics", {{"t_end", 40.0}, {"sample_step", 0.05}}}};
    // L=8 stands in for the tensor-network chain lengths.
    if (name == "fig3c-desk")
        return {{"name", "fig3c-desk"},
                {"model", {{"family", "tfim"}, {"L", 8}, {"J", 0.75}, {"h_z", 1.0}, {"h_x", 0.3}, {"boundary", "periodic"}}},
                {"dissipator", {{"kind", "hop"}, {"epsilon", 0.2}, {"gge_limit", false}, {"convention", "half"}}},
                {"engine", {{"kind", "exact"}, {"propagation", "krylov"}}},
                {"experiment", {{"kind", "scan_T"}, {"betas", {0.0, 0.05, 0.1, 0.15, 0.2}}, {"ell", 2}}},
                {"numerics", {{"t_end", 20.0}, {"sample_step", 0.05}}}};
    // Exploratory at L=8; the sign of the crossing is not expected to survive.
    if (name == "fig4a-desk")
        return {{"name", "fig4a-desk"},
                {"model", {{"family", "staggered_xxz"}, {"L", 8}, {"J", 1.0}, {"delta_even", 1.6}, {"delta_odd", 0.8}, {"boundary", "periodic"}}},
                {"dissipator", {{"kind", "raise"}, {"epsilon", 0.05}, {"gge_limit", false}}},
                {"engine", {{"kind", "exact"}, {"propagation", "krylov"}}},
                {"experiment", {{"kind", "crossing"}, {"betas", {0.0, 0.12}}, {"mus", {0.0}}, {"ell", 2}}},
                {"numerics", {{"t_end", 20.0}, {"sample_step", 0.05}}}};
    if (name == "em1") {
        json runs = json::array();
        for (const auto& [label, hx] : {std::pair<std::string, double>{"chaotic", 0.3}, {"integrable", 0.0}})
            for (int L : {10, 12})
                runs.push_back({{"name", label + "-L" + std::to_string(L)},
                                {"model", {{"family", "tfim"}, {"L", L}, {"J", 0.75}, {"h_z", 1.0}, {"h_x", hx}, {"boundary", "open"}}},
                                {"dissipator", {{"kind", "hop"}, {"epsilon", 1.0}, {"gge_limit", false}, {"convention", "pauli"}}},
                                {"engine", {{"kind", "spectral"}}},
                                {"experiment", {{"kind", "landscape"},
                                                {"betas", {{"start", -0.2}, {"stop", 0.6}, {"step", 0.01}}},
                                                {"mus", {0.0}},
                                                {"slow_modes", 4}}}});
        return {{"name", "em1"}, {"runs", runs}};
    }
    if (name == "em2") {
        json runs = json::array();
        for (int ell : {2, 10})
            runs.push_back({{"name", "ell" + std::to_string(ell)},
                            {"model", tfim_int},
                            {"dissipator", {{"kind", "hop"}, {"gge_limit", true}}},
                            {"engine", {{"kind", "gge_flow"}}},
                            {"experiment", {{"kind", "scan_T"},
                                            {"betas", {{"start", 0.0}, {"stop", 0.25}, {"step", 0.025}}},
                                            {"ell", ell},
                                            {"probe_time", 12.0}}},
                            {"numerics", {{"t_end", 15.0}, {"sample_step", 0.05}}}});
        return {{"name", "em2"}, {"runs", runs}};
    }
    if (name == "em3")
        return {{"name", "em3"},
                {"model", {{"family", "staggered_xxz"}, {"L", 12}, {"J", 1.0}, {"delta_even", 1.6}, {"delta_odd", 0.8}, {"boundary", "periodic"}}},
                {"dissipator", {{"kind", "raise"}, {"epsilon", 0.05}, {"gge_limit", false}}},
                {"engine", {{"kind", "spectral"}}},
                {"experiment", {{"kind", "landscape"},
                                {"betas", {{"start", -0.1}, {"stop", 0.4}, {"step", 0.005}}},
                                {"mus", {-0.2, -0.1, 0.0, 0.1, 0.2}},
                                {"slow_modes", 4}}}};
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ValidationError("unknown preset '" + name + "' (known: " + known + ")", "--preset");
}

inline ConfigBundle preset(const std::string& name) { return parse_config(preset_document(name)); }

}  // namespace mpemba
