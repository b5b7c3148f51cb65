#include "colloc/problem_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "colloc/kernels.hpp"

namespace colloc {

namespace fs = std::filesystem;
using nlohmann::json;

ProblemPaths ProblemPaths::from_base(const std::string& base) {
    return {base + ".prob.json", base + ".bounds.json", base + ".guess.json"};
}

namespace {

double encode_bound(double v) {
    if (v > kBoundInf) return kBoundInf;
    if (v < -kBoundInf) return -kBoundInf;
    return v;
}

double decode_bound(double v) {
    if (v >= kBoundInf) return kInf;
    if (v <= -kBoundInf) return -kInf;
    return v;
}

json bounds_to_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(encode_bound(x));
    return a;
}

json block_to_json(const FunctionBlock& b) {
    return json{{"kernel", b.kernel},
                {"dep_indices", b.dep_indices},
                {"row_indices", b.row_indices},
                {"aux", b.aux},
                {"jac_slot_offset", b.jac_slot_offset},
                {"jac_slot_count", b.jac_slot_count},
                {"output_dim", b.output_dim}};
}

FunctionBlock block_from_json(const json& j, const std::string& where) {
    try {
        FunctionBlock b;
        b.kernel = j.at("kernel").get<std::string>();
        b.dep_indices = j.at("dep_indices").get<std::vector<int>>();
        b.row_indices = j.at("row_indices").get<std::vector<int>>();
        b.aux = j.at("aux").get<std::vector<double>>();
        b.jac_slot_offset = j.at("jac_slot_offset").get<int>();
        b.jac_slot_count = j.at("jac_slot_count").get<int>();
        b.output_dim = j.at("output_dim").get<int>();
        return b;
    } catch (const json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
}

void write_file(const std::string& path, const json& j, std::vector<std::string>& written) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out << j.dump(2) << "\n";
        if (!out) throw IoError("write failed: " + tmp);
    }
    written.push_back(tmp);
}

json read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::vector<double> real_array(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw FormatError(where + ": missing field " + key);
    std::vector<double> out;
    for (const auto& v : j[key]) {
        if (!v.is_number()) throw FormatError(where + ": field " + key + " has a non-numeric entry");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

void save_problem(const NlpProblem& p, std::span<const double> x0, const ProblemPaths& paths) {
    json prob{{"schema_version", "1"},
              {"num_vars", p.num_vars},
              {"num_constraints", p.num_constraints},
              {"jac_nnz", p.jac_nnz}};
    prob["constraints"] = json::array();
    for (const auto& b : p.constraint_blocks) prob["constraints"].push_back(block_to_json(b));
    prob["objectives"] = json::array();
    for (const auto& b : p.objective_blocks) prob["objectives"].push_back(block_to_json(b));

    json bounds{{"var_lower", bounds_to_json(p.var_lower)},
                {"var_upper", bounds_to_json(p.var_upper)},
                {"constr_lower", bounds_to_json(p.constr_lower)},
                {"constr_upper", bounds_to_json(p.constr_upper)}};

    json guess{{"x0", std::vector<double>(x0.begin(), x0.end())}};

    std::vector<std::string> tmps;
    try {
        write_file(paths.problem, prob, tmps);
        write_file(paths.bounds, bounds, tmps);
        write_file(paths.guess, guess, tmps);
        fs::rename(tmps[0], paths.problem);
        fs::rename(tmps[1], paths.bounds);
        fs::rename(tmps[2], paths.guess);
    } catch (...) {
        std::error_code ec;
        for (const auto& t : tmps) fs::remove(t, ec);
        throw;
    }
}

std::pair<NlpProblem, std::vector<double>> load_problem(const ProblemPaths& paths) {
    const json prob = read_file(paths.problem);
    const json bounds = read_file(paths.bounds);
    const json guess = read_file(paths.guess);

    if (!prob.contains("schema_version") || prob["schema_version"] != "1")
        throw FormatError(paths.problem + ": unsupported schema_version");

    NlpProblem p;
    try {
        p.num_vars = prob.at("num_vars").get<int>();
        p.num_constraints = prob.at("num_constraints").get<int>();
        p.jac_nnz = prob.at("jac_nnz").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(paths.problem + ": " + e.what());
    }
    int bi = 0;
    for (const auto& jb : prob.value("constraints", json::array()))
        p.constraint_blocks.push_back(
            block_from_json(jb, paths.problem + ": constraint block " + std::to_string(bi++)));
    bi = 0;
    for (const auto& jb : prob.value("objectives", json::array()))
        p.objective_blocks.push_back(
            block_from_json(jb, paths.problem + ": objective block " + std::to_string(bi++)));

    p.var_lower = real_array(bounds, "var_lower", paths.bounds);
    p.var_upper = real_array(bounds, "var_upper", paths.bounds);
    p.constr_lower = real_array(bounds, "constr_lower", paths.bounds);
    p.constr_upper = real_array(bounds, "constr_upper", paths.bounds);
    for (auto* v : {&p.var_lower, &p.var_upper, &p.constr_lower, &p.constr_upper})
        for (double& x : *v) x = decode_bound(x);

    const auto diags = validate(p);
    if (!diags.empty()) {
        std::string msg = paths.problem + ": invalid problem:";
        for (const auto& d : diags) msg += "\n  " + d;
        throw FormatError(msg);
    }

    std::vector<double> x0 = real_array(guess, "x0", paths.guess);
    if (static_cast<int>(x0.size()) != p.num_vars)
        throw FormatError(paths.guess + ": x0 length " + std::to_string(x0.size()) +
                          " != num_vars " + std::to_string(p.num_vars));
    for (size_t i = 0; i < x0.size(); ++i)
        if (!std::isfinite(x0[i]))
            throw FormatError(paths.guess + ": x0[" + std::to_string(i) + "] is not finite");

    return {std::move(p), std::move(x0)};
}

std::vector<std::string> validate(const NlpProblem& p) {
    ensure_builtin_kernels();
    std::vector<std::string> diags;
    auto add = [&](const std::string& s) { diags.push_back(s); };

    if (static_cast<int>(p.var_lower.size()) != p.num_vars ||
        static_cast<int>(p.var_upper.size()) != p.num_vars)
        add("variable bound arrays do not match num_vars");
    else
        for (int i = 0; i < p.num_vars; ++i)
            if (p.var_lower[i] > p.var_upper[i])
                add("var_lower[" + std::to_string(i) + "] > var_upper[" + std::to_string(i) + "]");

    if (static_cast<int>(p.constr_lower.size()) != p.num_constraints ||
        static_cast<int>(p.constr_upper.size()) != p.num_constraints)
        add("constraint bound arrays do not match num_constraints");
    else
        for (int i = 0; i < p.num_constraints; ++i)
            if (p.constr_lower[i] > p.constr_upper[i])
                add("constr_lower[" + std::to_string(i) + "] > constr_upper[" + std::to_string(i) +
                    "]");

    std::vector<int> row_owner(p.num_constraints, -1);
    std::vector<int> slot_owner(p.jac_nnz, -1);

    for (size_t bi = 0; bi < p.constraint_blocks.size(); ++bi) {
        const auto& b = p.constraint_blocks[bi];
        const std::string tag = "constraint block " + std::to_string(bi);
        const Kernel* k = find_kernel(b.kernel);
        if (!k) {
            add(tag + ": unknown kernel '" + b.kernel + "'");
            continue;
        }
        for (double a : b.aux)
            if (!std::isfinite(a)) {
                add(tag + ": non-finite aux entry");
                break;
            }
        int in_dim = 0, out_dim = 0, nnz = 0;
        try {
            in_dim = k->input_dim(b.aux);
            out_dim = k->output_dim(b.aux);
            nnz = k->jac_nnz(b.aux);
        } catch (const std::exception& e) {
            add(tag + ": bad aux: " + e.what());
            continue;
        }
        if (static_cast<int>(b.dep_indices.size()) != in_dim)
            add(tag + ": dep_indices length " + std::to_string(b.dep_indices.size()) +
                " != kernel input dim " + std::to_string(in_dim));
        if (b.output_dim != out_dim)
            add(tag + ": output_dim " + std::to_string(b.output_dim) + " != kernel output dim " +
                std::to_string(out_dim));
        if (static_cast<int>(b.row_indices.size()) != b.output_dim)
            add(tag + ": row_indices length != output_dim");
        if (b.jac_slot_count != nnz)
            add(tag + ": jac_slot_count " + std::to_string(b.jac_slot_count) + " != kernel nnz " +
                std::to_string(nnz));
        for (int d : b.dep_indices)
            if (d < 0 || d >= p.num_vars) {
                add(tag + ": dependent index " + std::to_string(d) + " out of range");
                break;
            }
        for (int r : b.row_indices) {
            if (r < 0 || r >= p.num_constraints) {
                add(tag + ": row index " + std::to_string(r) + " out of range");
                continue;
            }
            if (row_owner[r] >= 0)
                add("constraint row " + std::to_string(r) + " owned by blocks " +
                    std::to_string(row_owner[r]) + " and " + std::to_string(bi));
            else
                row_owner[r] = static_cast<int>(bi);
        }
        if (b.jac_slot_offset < 0 || b.jac_slot_count < 0 ||
            b.jac_slot_offset + b.jac_slot_count > p.jac_nnz) {
            add(tag + ": jac slot range out of bounds");
        } else {
            for (int s = b.jac_slot_offset; s < b.jac_slot_offset + b.jac_slot_count; ++s) {
                if (slot_owner[s] >= 0)
                    add("jacobian slot " + std::to_string(s) + " owned by blocks " +
                        std::to_string(slot_owner[s]) + " and " + std::to_string(bi));
                else
                    slot_owner[s] = static_cast<int>(bi);
            }
        }
    }

    for (int r = 0; r < p.num_constraints; ++r)
        if (row_owner[r] < 0) add("unowned constraint row " + std::to_string(r));
    for (int s = 0; s < p.jac_nnz; ++s)
        if (slot_owner[s] < 0) add("unowned jacobian slot " + std::to_string(s));

    for (size_t bi = 0; bi < p.objective_blocks.size(); ++bi) {
        const auto& b = p.objective_blocks[bi];
        const std::string tag = "objective block " + std::to_string(bi);
        const Kernel* k = find_kernel(b.kernel);
        if (!k) {
            add(tag + ": unknown kernel '" + b.kernel + "'");
            continue;
        }
        if (!b.row_indices.empty()) add(tag + ": objective blocks own no constraint rows");
        if (b.output_dim != 1 || k->output_dim(b.aux) != 1)
            add(tag + ": objectives must be scalar");
        if (static_cast<int>(b.dep_indices.size()) != k->input_dim(b.aux))
            add(tag + ": dep_indices length != kernel input dim");
        for (int d : b.dep_indices)
            if (d < 0 || d >= p.num_vars) {
                add(tag + ": dependent index " + std::to_string(d) + " out of range");
                break;
            }
    }

    return diags;
}

}  // namespace colloc
