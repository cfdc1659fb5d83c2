#include "nbsolve/io.hpp"

#include <cstring>
#include <fstream>

namespace nbs {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void write_field_csv(const SolutionField& field, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.precision(17);
    const LatticeGrid& g = field.grid();
    os << "t";
    for (int i = 1; i <= g.d(); ++i) os << ",x" << i;
    os << ",u\n";
    for (std::size_t j = 0; j < g.num_levels(); ++j) {
        for (std::size_t p = 0; p < g.num_points(); ++p) {
            os << g.time(j);
            for (double c : g.coord(p)) os << ',' << c;
            os << ',' << field.value(j, p) << '\n';
        }
    }
    if (!os) throw IoError("write failed for " + path.string());
}

void write_field_bfd(const SolutionField& field, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const LatticeGrid& g = field.grid();
    os.write("BFD1", 4);
    write_u32(os, static_cast<std::uint32_t>(g.d()));
    write_u32(os, static_cast<std::uint32_t>(g.num_levels()));
    write_u64(os, g.num_points());
    write_f64(os, g.h());
    write_f64(os, g.tau());
    write_f64(os, g.T());
    for (std::size_t j = 0; j < g.num_levels(); ++j) write_f64(os, g.time(j));
    for (std::size_t j = 0; j < g.num_levels(); ++j)
        for (std::size_t p = 0; p < g.num_points(); ++p) write_f64(os, field.value(j, p));
    if (!os) throw IoError("write failed for " + path.string());
}

FieldDump read_field_bfd(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "BFD1", 4) != 0)
        throw IoError(path.string() + " is not a BFD1 field dump");
    FieldDump dump;
    dump.d = static_cast<int>(read_u32(is));
    std::uint32_t levels = read_u32(is);
    std::uint64_t points = read_u64(is);
    dump.h = read_f64(is);
    dump.tau = read_f64(is);
    dump.T = read_f64(is);
    dump.times.resize(levels);
    for (auto& t : dump.times) t = read_f64(is);
    dump.levels.assign(levels, std::vector<double>(points));
    for (auto& lv : dump.levels)
        for (auto& v : lv) v = read_f64(is);
    if (!is) throw IoError("truncated field dump " + path.string());
    return dump;
}

nlohmann::json diagnostics_json(const SolutionField& field) {
    const SolveDiagnostics& d = field.diagnostics();
    nlohmann::json levels = nlohmann::json::array();
    for (const LevelDiagnostics& lv : d.levels) {
        levels.push_back({{"level_time", lv.level_time},
                          {"iterations", lv.iterations},
                          {"final_update", lv.final_update},
                          {"observed_ratio", lv.observed_ratio}});
    }
    return {{"epsilon", d.epsilon},
            {"gamma", d.gamma},
            {"delta_bound", d.delta_bound},
            {"levels", std::move(levels)}};
}

namespace {

Coeff coeff_from_json(const nlohmann::json& j, int d, const char* what) {
    if (j.is_number()) return Coeff(j.get<double>());
    if (j.is_string()) return Coeff::from_expr(Expr::parse(j.get<std::string>(), d));
    throw ProblemError(std::string(what) + " must be a number or an expression string");
}

}  // namespace

ControlledProblem load_problem_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ProblemError("problem document must be a JSON object");
    auto require = [&](const char* key) -> const nlohmann::json& {
        auto it = doc.find(key);
        if (it == doc.end()) throw ProblemError(std::string("missing field '") + key + "'");
        return *it;
    };

    const int d = require("d").get<int>();
    const int d1 = require("d1").get<int>();

    std::vector<std::vector<double>> ell;
    for (const auto& v : require("ell")) ell.push_back(v.get<std::vector<double>>());
    if (static_cast<int>(ell.size()) != d1)
        throw ProblemError("'ell' must list d1 direction vectors (positive k only)");

    ControlledProblem problem;
    problem.basis = DirectionBasis(d, std::move(ell));
    problem.T = require("T").get<double>();
    problem.K = require("K").get<double>();
    problem.lambda = doc.value("lambda", 0.0);
    problem.g = Terminal::from_expr(Expr::parse(require("g").get<std::string>(), d));

    const auto& controls = require("controls");
    if (!controls.is_array() || controls.empty())
        throw ProblemError("'controls' must be a nonempty array");
    int auto_label = 0;
    for (const auto& c : controls) {
        ControlPoint ctl;
        ctl.label = c.value("label", "control" + std::to_string(auto_label));
        ++auto_label;
        const auto& sigma = c.at("sigma");
        if (!sigma.is_array() || static_cast<int>(sigma.size()) != d1)
            throw ProblemError("'sigma' must list d1 entries (shared by +-k)");
        for (const auto& s : sigma) ctl.sigma.push_back(coeff_from_json(s, d, "sigma"));
        const auto& b = c.at("b");
        if (!b.is_array() || static_cast<int>(b.size()) != 2 * d1)
            throw ProblemError("'b' must list 2*d1 entries ordered +1,-1,+2,-2,...");
        for (const auto& v : b) ctl.b.push_back(coeff_from_json(v, d, "b"));
        ctl.c = coeff_from_json(c.at("c"), d, "c");
        ctl.f = coeff_from_json(c.at("f"), d, "f");
        ctl.m = c.at("m").get<double>();
        problem.controls.push_back(std::move(ctl));
    }
    return problem;
}

ControlledProblem load_problem_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ProblemError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return load_problem_json(doc);
}

}  // namespace nbs
