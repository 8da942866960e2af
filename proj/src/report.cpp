#include "p2pgrid/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace p2pgrid {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string num(double v, int digits = 4) {
  char buf[64];
  const double limit = 0.5 * std::pow(10.0, -digits);
  std::snprintf(buf, sizeof buf, "%.*f", digits, std::abs(v) < limit ? 0.0 : v);
  return buf;
}

std::string num(const json& v, int digits = 4) { return v.is_number() ? num(v.get<double>(), digits) : "n/a"; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

/// Header plus rows of a comma-separated file without quoting.
std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int column(const std::vector<std::string>& header, const std::string& name, const fs::path& file) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error(file.string() + " has no column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

/// (key, value) pairs from two columns of a CSV, in file order.
std::vector<std::pair<std::string, std::string>> series(const fs::path& file, const std::string& key,
                                                        const std::string& value) {
  const auto rows = read_csv(file);
  if (rows.empty()) throw std::runtime_error(file.string() + " is empty");
  const int k = column(rows[0], key, file), v = column(rows[0], value, file);
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 1; i < rows.size(); ++i) out.emplace_back(rows[i][k], rows[i][v]);
  return out;
}

std::map<std::string, double> lambda_by_bus(const fs::path& file) {
  std::map<std::string, double> out;
  for (const auto& [bus, lam] : series(file, "bus", "lambda_usd_mwh")) out[bus] = std::stod(lam);
  return out;
}

void require(const fs::path& dir, const std::vector<std::string>& files) {
  std::vector<std::string> missing;
  for (const auto& f : files)
    if (!fs::exists(dir / f)) missing.push_back(f);
  if (!missing.empty()) throw MissingArtifacts(dir, files);
}

std::vector<std::string> network_row(const json& s) {
  if (!s.contains("network")) return {"n/a", "n/a", "n/a", "n/a"};
  const auto& n = s["network"];
  return {num(n["mean_loading_pct"]), num(n["max_loading_pct"]), num(n["v_min_pu"], 6), num(n["v_max_pu"], 6)};
}

Report run_report(const fs::path& dir) {
  require(dir, {"summary.json", "trades.csv", "revenue.json"});
  const auto s = read_json(dir / "summary.json");
  Report r;
  r.kind = "run";
  r.scenario = s.value("scenario", "");
  r.hash = s.value("hash", "");
  const auto& st = s["settlement"];
  r.headline.name = "settlement";
  r.headline.header = {"mode", "consumer_payments", "producer_revenues", "nuc", "generation_cost",
                       "volume_mw", "average_charge", "welfare", "rounds", "converged"};
  r.headline.rows.push_back({s["mode"].get<std::string>(), num(st["consumer_payments"]),
                             num(st["producer_revenues"]), num(st["nuc"]), num(st["generation_cost"]),
                             num(st["volume_mw"]), num(st["average_charge"]), num(s["welfare"]),
                             std::to_string(s["rounds"].get<int>()), s["converged"].get<bool>() ? "yes" : "no"});
  r.network.name = "network";
  r.network.header = {"mode", "mean_loading_pct", "max_loading_pct", "v_min_pu", "v_max_pu"};
  auto row = network_row(s);
  row.insert(row.begin(), s["mode"].get<std::string>());
  r.network.rows.push_back(row);
  r.loading.name = "loading_series";
  r.loading.header = {"line", "loading_pct"};
  r.voltage.name = "voltage_series";
  r.voltage.header = {"bus", "v_mag_pu"};
  if (s["opf_feasible"].get<bool>()) {
    require(dir, {"summary.json", "trades.csv", "revenue.json", "buses.csv", "lines.csv"});
    for (const auto& [l, v] : series(dir / "lines.csv", "line", "loading_pct")) r.loading.rows.push_back({l, v});
    for (const auto& [b, v] : series(dir / "buses.csv", "bus", "v_mag_pu")) r.voltage.rows.push_back({b, v});
  } else {
    r.notes.push_back("final OPF infeasible: no loading or voltage series");
  }
  if (!s["converged"].get<bool>()) r.notes.push_back("run did not converge");
  return r;
}

Report sweep_report(const fs::path& dir) {
  const auto doc = read_json(dir / "sweep.json");
  Report r;
  r.kind = "sweep";
  r.scenario = doc.value("scenario", "");
  r.hash = doc.value("hash", "");

  // gamma -> mode -> cell
  std::map<double, std::map<std::string, json>> cells;
  std::vector<std::string> modes;
  for (const auto& c : doc["cells"]) {
    const std::string mode = c["mode"];
    cells[c["gamma"].get<double>()][mode] = c;
    if (std::find(modes.begin(), modes.end(), mode) == modes.end()) modes.push_back(mode);
  }
  std::sort(modes.begin(), modes.end(), [](const std::string& a, const std::string& b) {
    return (a == "system") > (b == "system") || (a != "system" && b != "system" && a < b);
  });

  r.headline.name = "gamma_table";
  r.headline.header = {"quantity"};
  std::vector<std::string> gamma_row{"Gamma_b"}, demand_row{"sum Gamma_b D^p_b (MW)"};
  std::map<std::string, std::vector<std::string>> charge_rows;
  for (const auto& m : modes) charge_rows[m] = {"E(c^n) " + m + "-centric ($/MWh)"};
  for (const auto& [g, by_mode] : cells) {
    r.headline.header.push_back(num(g, 2));
    gamma_row.push_back(num(g, 2));
    std::string demand = "n/a";
    for (const auto& m : modes) {
      const auto it = by_mode.find(m);
      std::string value = "n/a";
      if (it != by_mode.end()) {
        const auto& c = it->second;
        if (!c["ok"].get<bool>()) {
          value = "failed";
          r.notes.push_back("Gamma " + num(g, 2) + " " + m + ": " + c.value("error", "failed"));
        } else {
          const auto& s = c["summary"];
          demand = num(s["p2p_demand_mw"]);
          const auto& avg = s["settlement"]["average_charge"];
          value = avg.is_number() ? num(avg) : num(0.0);  // no trades, no charge
          if (!s["converged"].get<bool>())
            r.notes.push_back("Gamma " + num(g, 2) + " " + m + ": not converged after " +
                              std::to_string(s["rounds"].get<int>()) + " rounds");
        }
      }
      charge_rows[m].push_back(value);
    }
    demand_row.push_back(demand);
  }
  r.headline.rows = {gamma_row, demand_row};
  for (const auto& m : modes) r.headline.rows.push_back(charge_rows[m]);

  r.network.name = "network";
  r.network.header = {"gamma", "mode", "mean_loading_pct", "max_loading_pct", "v_min_pu", "v_max_pu",
                      "mean_abs_dlmp_gap"};
  r.loading.name = "loading_series";
  r.loading.header = {"gamma", "mode", "line", "loading_pct"};
  r.voltage.name = "voltage_series";
  r.voltage.header = {"gamma", "mode", "bus", "v_mag_pu"};
  for (const auto& [g, by_mode] : cells) {
    // mean |lambda_system - lambda_peer| over buses, when both OPFs are feasible
    std::string gap = "n/a";
    const auto sys = by_mode.find("system"), peer = by_mode.find("peer");
    auto feasible = [&](std::map<std::string, json>::const_iterator it) {
      return it != by_mode.end() && it->second["ok"].get<bool>() && it->second["summary"]["opf_feasible"].get<bool>();
    };
    if (feasible(sys) && feasible(peer)) {
      const auto a = lambda_by_bus(dir / sys->second["directory"].get<std::string>() / "buses.csv");
      const auto b = lambda_by_bus(dir / peer->second["directory"].get<std::string>() / "buses.csv");
      double sum = 0.0;
      for (const auto& [bus, lam] : a) sum += std::abs(lam - b.at(bus));
      gap = num(a.empty() ? 0.0 : sum / a.size());
    }
    for (const auto& m : modes) {
      const auto it = by_mode.find(m);
      if (it == by_mode.end() || !it->second["ok"].get<bool>()) continue;
      const auto& s = it->second["summary"];
      auto row = network_row(s);
      row.insert(row.begin(), {num(g, 2), m});
      row.push_back(gap);
      r.network.rows.push_back(row);
      if (!s["opf_feasible"].get<bool>()) continue;
      const fs::path cell = dir / it->second["directory"].get<std::string>();
      require(cell, {"summary.json", "buses.csv", "lines.csv"});
      for (const auto& [l, v] : series(cell / "lines.csv", "line", "loading_pct"))
        r.loading.rows.push_back({num(g, 2), m, l, v});
      for (const auto& [b, v] : series(cell / "buses.csv", "bus", "v_mag_pu"))
        r.voltage.rows.push_back({num(g, 2), m, b, v});
    }
  }
  return r;
}

json cell_value(const std::string& text) {
  if (text.empty()) return text;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end && *end == '\0') return v;
  return text;
}

}  // namespace

MissingArtifacts::MissingArtifacts(const fs::path& dir, std::vector<std::string> files)
    : std::runtime_error("missing artifacts in " + dir.string() + ": expected " + join(files, ", ")),
      expected(std::move(files)) {}

Format format_from_string(const std::string& text) {
  if (text == "csv") return Format::csv;
  if (text == "json") return Format::json;
  if (text == "md") return Format::md;
  throw std::invalid_argument("format must be csv, json or md, got '" + text + "'");
}

std::string extension(Format format) {
  switch (format) {
    case Format::csv: return "csv";
    case Format::json: return "json";
    case Format::md: return "md";
  }
  return "csv";
}

Report build_report(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw MissingArtifacts(dir, {"sweep.json", "summary.json", "trades.csv", "revenue.json"});
  if (fs::exists(dir / "sweep.json")) return sweep_report(dir);
  if (fs::exists(dir / "summary.json")) return run_report(dir);
  throw MissingArtifacts(dir, {"sweep.json", "summary.json", "trades.csv", "revenue.json"});
}

std::string render(const Table& t, Format format, const Report& report) {
  std::ostringstream out;
  switch (format) {
    case Format::csv:
      out << "# scenario " << report.scenario << " hash " << report.hash << "\n";
      out << join(t.header, ",") << "\n";
      for (const auto& row : t.rows) out << join(row, ",") << "\n";
      break;
    case Format::json: {
      json rows = json::array();
      for (const auto& row : t.rows) {
        json obj = json::object();
        for (std::size_t i = 0; i < row.size() && i < t.header.size(); ++i) obj[t.header[i]] = cell_value(row[i]);
        rows.push_back(obj);
      }
      json doc = {{"scenario", report.scenario}, {"hash", report.hash}, {"table", t.name},
                  {"columns", t.header}, {"rows", rows}};
      if (&t == &report.headline) doc["notes"] = report.notes;
      out << doc.dump(2) << "\n";
      break;
    }
    case Format::md:
      out << "Scenario `" << report.scenario << "`, hash `" << report.hash << "`\n\n";
      out << "| " << join(t.header, " | ") << " |\n|";
      for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "---:|" : "---|");
      out << "\n";
      for (const auto& row : t.rows) out << "| " << join(row, " | ") << " |\n";
      if (&t == &report.headline && !report.notes.empty()) {
        out << "\n";
        for (const auto& n : report.notes) out << "- " << n << "\n";
      }
      break;
  }
  return out.str();
}

std::vector<std::string> write_report(const fs::path& dir, const Report& report, Format format) {
  std::vector<std::string> names;
  auto emit = [&](const Table& t, Format f) {
    const std::string name = "report_" + t.name + "." + extension(f);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << render(t, f, report);
    names.push_back(name);
  };
  emit(report.headline, format);
  emit(report.network, format);
  // series stay CSV: they feed plotting tools
  emit(report.loading, Format::csv);
  emit(report.voltage, Format::csv);
  return names;
}

}  // namespace p2pgrid
