#include "kiss/portfolio_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "kiss/errors.hpp"
#include "kiss/fingerprint.hpp"

namespace kiss {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_real(std::string_view field, std::string_view name, std::size_t line) {
    double value = 0.0;
    const auto* end = field.data() + field.size();
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (field.empty() || ec != std::errc() || ptr != end) {
        throw InputError("line " + std::to_string(line) + ", field '" + std::string(name) +
                         "': not a number: '" + std::string(field) + "'");
    }
    return value;
}

Portfolio parse_csv(std::string_view source) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= source.size()) {
        const auto pos = source.find('\n', start);
        lines.push_back(source.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    if (lines.empty() || trim(lines.front()).empty()) throw InputError("line 1: missing CSV header");

    std::string_view header_line = lines.front();
    if (header_line.starts_with("\xEF\xBB\xBF")) header_line.remove_prefix(3);
    const auto header = split_commas(header_line);
    const std::size_t n_cols = header.size();
    if (n_cols < 7 || header[0] != "facility_id" || header[1] != "borrower_id" || header[2] != "rho" ||
        header[n_cols - 3] != "ead" || header[n_cols - 2] != "lgd" || header[n_cols - 1] != "pd") {
        throw InputError("line 1: header must be facility_id,borrower_id,rho,beta_<factor>...,ead,lgd,pd");
    }
    std::vector<std::string> names;
    for (std::size_t c = 3; c + 3 < n_cols; ++c) {
        if (!header[c].starts_with("beta_") || header[c].size() == 5) {
            throw InputError("line 1: column '" + std::string(header[c]) + "' is not beta_<factor>");
        }
        names.emplace_back(header[c].substr(5));
    }
    FactorModel factors = FactorModel::independent(names);

    std::vector<Facility> facilities;
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const std::size_t line_no = ln + 1;
        if (trim(lines[ln]).empty()) continue;
        const auto fields = split_commas(lines[ln]);
        if (fields.size() != n_cols) {
            throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(n_cols) +
                             " fields, got " + std::to_string(fields.size()));
        }
        Facility f;
        f.id = std::string(fields[0]);
        f.borrower_id = std::string(fields[1]);
        if (f.id.empty()) throw InputError("line " + std::to_string(line_no) + ", field 'facility_id': empty");
        if (f.borrower_id.empty()) {
            throw InputError("line " + std::to_string(line_no) + ", field 'borrower_id': empty");
        }
        if (auto [it, inserted] = seen.emplace(f.id, line_no); !inserted) {
            throw InputError("line " + std::to_string(line_no) + ": duplicate facility id '" + f.id +
                             "' (first on line " + std::to_string(it->second) + ")");
        }
        f.rho = parse_real(fields[2], "rho", line_no);
        if (!(std::abs(f.rho) < 1.0)) {
            throw InputError("line " + std::to_string(line_no) + ", field 'rho': |rho| >= 1");
        }
        for (std::size_t k = 0; k < names.size(); ++k) {
            f.sector_loadings.push_back(parse_real(fields[3 + k], header[3 + k], line_no));
        }
        DefaultOnlyLoss d;
        d.ead = parse_real(fields[n_cols - 3], "ead", line_no);
        d.lgd = parse_real(fields[n_cols - 2], "lgd", line_no);
        d.pd = parse_real(fields[n_cols - 1], "pd", line_no);
        if (!(d.pd > 0.0 && d.pd < 1.0)) {
            throw InputError("line " + std::to_string(line_no) + ", field 'pd': PD outside (0,1)");
        }
        if (!(d.lgd >= 0.0 && d.lgd <= 1.0)) {
            throw InputError("line " + std::to_string(line_no) + ", field 'lgd': LGD outside [0,1]");
        }
        f.loss = LossSpec(d);
        facilities.push_back(std::move(f));
    }
    return make_portfolio(std::move(factors), std::move(facilities));
}

double get_real(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw InputError(where + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number()) throw InputError(where + ": field '" + key + "' must be a number");
    return v.get<double>();
}

std::vector<double> get_reals(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw InputError(where + ": field '" + key + "' must be an array of numbers");
    }
    std::vector<double> out;
    for (const auto& v : j.at(key)) {
        if (!v.is_number()) throw InputError(where + ": field '" + key + "' must contain numbers only");
        out.push_back(v.get<double>());
    }
    return out;
}

std::string get_id(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw InputError(where + ": field '" + key + "' must be a string");
    }
    auto s = j.at(key).get<std::string>();
    if (s.empty()) throw InputError(where + ": field '" + key + "' is empty");
    if (s.find(',') != std::string::npos) throw InputError(where + ": field '" + key + "' contains a comma");
    return s;
}

Facility facility_from_json_at(const json& j, const std::vector<std::string>& names, const std::string& where) {
    if (!j.is_object()) throw InputError(where + ": facility must be an object");
    Facility f;
    f.id = get_id(j, "id", where);
    const std::string at = where + " (id '" + f.id + "')";
    f.borrower_id = get_id(j, "borrower_id", at);
    f.rho = get_real(j, "rho", at);
    if (!(std::abs(f.rho) < 1.0)) throw InputError(at + ": |rho| >= 1");
    if (j.contains("weight")) f.weight = get_real(j, "weight", at);

    if (!j.contains("loadings")) throw InputError(at + ": missing field 'loadings'");
    const auto& l = j.at("loadings");
    if (l.is_array()) {
        f.sector_loadings = get_reals(j, "loadings", at);
        if (f.sector_loadings.size() != names.size()) {
            throw InputError(at + ": expected " + std::to_string(names.size()) + " loadings, got " +
                             std::to_string(f.sector_loadings.size()));
        }
    } else if (l.is_object()) {
        f.sector_loadings.assign(names.size(), 0.0);
        for (const auto& [name, value] : l.items()) {
            const auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) throw InputError(at + ": unknown factor name '" + name + "'");
            if (!value.is_number()) throw InputError(at + ": loading for '" + name + "' must be a number");
            f.sector_loadings[static_cast<std::size_t>(it - names.begin())] = value.get<double>();
        }
    } else {
        throw InputError(at + ": 'loadings' must be an array or an object keyed by factor name");
    }

    if (!j.contains("loss") || !j.at("loss").is_object()) throw InputError(at + ": missing object 'loss'");
    const auto& loss = j.at("loss");
    const std::string kind = loss.contains("kind") && loss.at("kind").is_string() ? loss.at("kind").get<std::string>() : "";
    if (kind == "default_only") {
        DefaultOnlyLoss d{get_real(loss, "ead", at), get_real(loss, "lgd", at), get_real(loss, "pd", at)};
        if (!(d.pd > 0.0 && d.pd < 1.0)) throw InputError(at + ": PD outside (0,1)");
        f.loss = LossSpec(d);
    } else if (kind == "staircase") {
        f.loss = LossSpec(StaircaseLoss{get_reals(loss, "thresholds", at), get_reals(loss, "levels", at)});
    } else {
        throw InputError(at + ": loss kind must be 'default_only' or 'staircase'");
    }
    return f;
}

Portfolio parse_json(std::string_view source) {
    json doc;
    try {
        doc = json::parse(source);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InputError("portfolio JSON must be an object");
    if (doc.contains("schema") && doc.at("schema") != "kiss/v1") {
        throw InputError("unsupported schema " + doc.at("schema").dump());
    }
    if (!doc.contains("factors") || !doc.at("factors").is_object()) throw InputError("missing object 'factors'");
    const auto& fj = doc.at("factors");
    if (!fj.contains("names") || !fj.at("names").is_array()) throw InputError("factors: missing array 'names'");
    std::vector<std::string> names;
    for (const auto& n : fj.at("names")) {
        if (!n.is_string()) throw InputError("factors: names must be strings");
        names.push_back(n.get<std::string>());
    }
    const auto m = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(m, m);
    if (fj.contains("correlation")) {
        const auto& cj = fj.at("correlation");
        if (!cj.is_array() || static_cast<Eigen::Index>(cj.size()) != m) {
            throw InputError("factors: correlation must be a " + std::to_string(m) + "x" + std::to_string(m) + " array");
        }
        for (Eigen::Index a = 0; a < m; ++a) {
            const auto& row = cj.at(a);
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m) {
                throw InputError("factors: correlation row " + std::to_string(a) + " has wrong length");
            }
            for (Eigen::Index b = 0; b < m; ++b) {
                if (!row.at(b).is_number()) throw InputError("factors: correlation entries must be numbers");
                corr(a, b) = row.at(b).get<double>();
            }
        }
    }
    FactorModel factors = FactorModel::make(names, std::move(corr));

    if (!doc.contains("facilities") || !doc.at("facilities").is_array()) throw InputError("missing array 'facilities'");
    std::vector<Facility> facilities;
    const auto& arr = doc.at("facilities");
    facilities.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        facilities.push_back(facility_from_json_at(arr[i], factors.names, "facility " + std::to_string(i)));
    }
    return make_portfolio(std::move(factors), std::move(facilities));
}

json loss_to_json(const LossSpec& loss) {
    if (loss.is_default_only()) {
        const auto& d = loss.default_only();
        return {{"kind", "default_only"}, {"ead", d.ead}, {"lgd", d.lgd}, {"pd", d.pd}};
    }
    const auto& s = loss.staircase();
    return {{"kind", "staircase"}, {"thresholds", s.thresholds}, {"levels", s.levels}};
}

}  // namespace

std::string format_double(double x) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, ptr);
}

Facility facility_from_json(const json& j, const std::vector<std::string>& factor_names) {
    return facility_from_json_at(j, factor_names, "candidate");
}

json facility_to_json(const Facility& f) {
    json j = {{"id", f.id},
              {"borrower_id", f.borrower_id},
              {"rho", f.rho},
              {"loadings", f.sector_loadings},
              {"loss", loss_to_json(f.loss)}};
    if (f.weight != 1.0) j["weight"] = f.weight;
    return j;
}

Portfolio parse_portfolio(std::string_view source, PortfolioFormat format) {
    return format == PortfolioFormat::csv ? parse_csv(source) : parse_json(source);
}

std::string serialize_portfolio(const Portfolio& p, PortfolioFormat format) {
    if (format == PortfolioFormat::json) {
        json corr = json::array();
        for (Eigen::Index a = 0; a < p.factors.correlation.rows(); ++a) {
            json row = json::array();
            for (Eigen::Index b = 0; b < p.factors.correlation.cols(); ++b) row.push_back(p.factors.correlation(a, b));
            corr.push_back(std::move(row));
        }
        json facilities = json::array();
        for (const auto& f : p.facilities) facilities.push_back(facility_to_json(f));
        json doc = {{"schema", "kiss/v1"},
                    {"factors", {{"names", p.factors.names}, {"correlation", std::move(corr)}}},
                    {"facilities", std::move(facilities)}};
        return doc.dump() + "\n";
    }

    if (!p.factors.identity) throw InputError("CSV portfolios require independent factors; use JSON");
    std::string out = "facility_id,borrower_id,rho";
    for (const auto& n : p.factors.names) out += ",beta_" + n;
    out += ",ead,lgd,pd\n";
    for (const auto& f : p.facilities) {
        if (!f.loss.is_default_only() || f.weight != 1.0) {
            throw InputError("facility '" + f.id + "': CSV supports default-only, unit-weight facilities only; use JSON");
        }
        out += f.id + "," + f.borrower_id + "," + format_double(f.rho);
        for (double b : f.sector_loadings) out += "," + format_double(b);
        const auto& d = f.loss.default_only();
        out += "," + format_double(d.ead) + "," + format_double(d.lgd) + "," + format_double(d.pd) + "\n";
    }
    return out;
}

PortfolioFormat format_for_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".csv" ? PortfolioFormat::csv : PortfolioFormat::json;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string() + ": file not found");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

LoadedPortfolio load_portfolio(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return {parse_portfolio(bytes, format_for_path(path)), fingerprint(bytes)};
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

}  // namespace kiss
