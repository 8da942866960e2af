#include "p2pgrid/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

namespace p2pgrid {

using nlohmann::json;

namespace {

std::string line_name(const Line& l) {
  return "line " + std::to_string(l.id) + " (" + std::to_string(l.from) + "-" + std::to_string(l.to) + ")";
}

}  // namespace

void NetworkCase::finalize() {
  if (buses.empty()) throw ValidationError("case has no buses");
  int max_id = 0;
  std::set<int> seen;
  for (const auto& b : buses) {
    if (b.id < 0) throw ValidationError("bus " + std::to_string(b.id) + ": negative id");
    if (!seen.insert(b.id).second) throw ValidationError("bus " + std::to_string(b.id) + ": duplicate id");
    if (!(b.gamma >= 0.0 && b.gamma <= 1.0))
      throw ValidationError("bus " + std::to_string(b.id) + ": Gamma must lie in [0,1]");
    if (!(b.v_min > 0.0 && b.v_min <= b.v_max))
      throw ValidationError("bus " + std::to_string(b.id) + ": voltage bounds need 0 < V_min <= V_max");
    if (!(b.demand_p >= 0.0)) throw ValidationError("bus " + std::to_string(b.id) + ": negative active demand");
    max_id = std::max(max_id, b.id);
  }
  index_.assign(max_id + 1, -1);
  for (std::size_t i = 0; i < buses.size(); ++i) index_[buses[i].id] = static_cast<int>(i);
  if (!has_bus(root)) throw ValidationError("root bus " + std::to_string(root) + " does not exist");

  for (const auto& l : lines) {
    if (!has_bus(l.from) || !has_bus(l.to)) throw ValidationError(line_name(l) + ": dangling bus reference");
    if (l.from == l.to) throw ValidationError(line_name(l) + ": both ends on one bus");
    if (!(l.r >= 0.0 && l.x >= 0.0)) throw ValidationError(line_name(l) + ": negative impedance");
    if (!(l.rating > 0.0)) throw ValidationError(line_name(l) + ": rating must be positive");
  }
  for (const auto& g : generators) {
    if (!has_bus(g.bus)) throw ValidationError("generator at bus " + std::to_string(g.bus) + ": bus does not exist");
    if (g.p_min > g.p_max || g.q_min > g.q_max)
      throw ValidationError("generator at bus " + std::to_string(g.bus) + ": inverted output bounds");
  }

  // Cycle detection first so the error can name the loop.
  {
    std::vector<int> uf(buses.size());
    std::iota(uf.begin(), uf.end(), 0);
    std::function<int(int)> find = [&](int v) { return uf[v] == v ? v : uf[v] = find(uf[v]); };
    std::map<int, std::vector<int>> adj;
    for (const auto& l : lines) {
      const int a = find(bus_index(l.from)), b = find(bus_index(l.to));
      if (a == b) {
        // Recover the loop through the accepted edges.
        std::map<int, int> prev;
        std::queue<int> q;
        q.push(l.from);
        prev[l.from] = l.from;
        while (!q.empty()) {
          const int v = q.front();
          q.pop();
          if (v == l.to) break;
          for (int w : adj[v])
            if (!prev.count(w)) {
              prev[w] = v;
              q.push(w);
            }
        }
        std::vector<int> loop;
        for (int v = l.to; v != l.from; v = prev[v]) loop.push_back(v);
        loop.push_back(l.from);
        std::ostringstream os;
        os << "topology is not radial: " << line_name(l) << " closes the cycle";
        for (int v : loop) os << ' ' << v;
        throw ValidationError(os.str());
      }
      uf[a] = b;
      adj[l.from].push_back(l.to);
      adj[l.to].push_back(l.from);
    }
  }
  if (lines.size() + 1 != buses.size())
    throw ValidationError("topology is not radial: " + std::to_string(lines.size()) + " lines for " +
                          std::to_string(buses.size()) + " buses");

  // Orient away from the root.
  const int n = static_cast<int>(buses.size());
  std::vector<std::vector<int>> incident(n);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    incident[bus_index(lines[k].from)].push_back(static_cast<int>(k));
    incident[bus_index(lines[k].to)].push_back(static_cast<int>(k));
  }
  parent_line_.assign(n, -1);
  child_lines_.assign(n, {});
  order_.clear();
  std::vector<char> visited(n, 0);
  std::queue<int> q;
  q.push(root_index());
  visited[root_index()] = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    order_.push_back(v);
    for (int k : incident[v]) {
      Line& l = lines[k];
      const int other = bus_index(l.from) == v ? bus_index(l.to) : bus_index(l.from);
      if (visited[other]) continue;
      if (bus_index(l.from) != v) std::swap(l.from, l.to);
      visited[other] = 1;
      parent_line_[other] = k;
      child_lines_[v].push_back(k);
      q.push(other);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!visited[i])
      throw ValidationError("topology is not radial: bus " + std::to_string(buses[i].id) +
                            " is disconnected from the root");
}

bool NetworkCase::has_bus(int bus_id) const {
  return bus_id >= 0 && bus_id < static_cast<int>(index_.size()) && index_[bus_id] >= 0;
}

int NetworkCase::bus_index(int bus_id) const {
  if (!has_bus(bus_id)) throw std::out_of_range("unknown bus " + std::to_string(bus_id));
  return index_[bus_id];
}

double NetworkCase::total_demand_mw() const {
  double total = 0;
  for (const auto& b : buses) total += b.demand_p;
  return total * base.mva;
}

double NetworkCase::p2p_demand_mw() const {
  double total = 0;
  for (const auto& b : buses) total += b.gamma * b.demand_p;
  return total * base.mva;
}

void NetworkCase::set_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("Gamma override must lie in [0,1]");
  for (auto& b : buses) b.gamma = gamma;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
T optional_field(const json& obj, const char* key, T fallback) {
  return obj.contains(key) ? obj.at(key).get<T>() : fallback;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

NetworkCase case_from_json(const json& doc) {
  NetworkCase net;
  try {
    net.name = optional_field<std::string>(doc, "name", "");
    const auto& base = doc.contains("base") ? doc.at("base") : json::object();
    net.base.mva = optional_field(base, "mva", 1.0);
    net.base.kv = optional_field(base, "kv", 12.47);
    if (!(net.base.mva > 0)) throw ParseError("base.mva must be positive");
    const double s = net.base.mva;
    net.root = required<int>(doc, "root", "case");
    net.wholesale_price = required<double>(doc, "C_w", "case");
    if (doc.contains("root_supply")) {
      const auto& rs = doc.at("root_supply");
      net.root_supply.p_min = optional_field(rs, "P_min", -1e3 * s) / s;
      net.root_supply.p_max = optional_field(rs, "P_max", 1e3 * s) / s;
      net.root_supply.q_min = optional_field(rs, "Q_min", -1e3 * s) / s;
      net.root_supply.q_max = optional_field(rs, "Q_max", 1e3 * s) / s;
    }
    for (const auto& jb : required<json>(doc, "buses", "case")) {
      const std::string where = "bus record " + jb.dump();
      Bus b;
      b.id = required<int>(jb, "id", where);
      b.shunt_g = optional_field(jb, "G", 0.0);
      b.shunt_b = optional_field(jb, "B", 0.0);
      b.demand_p = optional_field(jb, "D_p", 0.0) / s;
      b.demand_q = optional_field(jb, "D_q", 0.0) / s;
      b.tariff = optional_field(jb, "T", 0.0);
      b.v_min = optional_field(jb, "V_min", 0.81);
      b.v_max = optional_field(jb, "V_max", 1.21);
      b.gamma = optional_field(jb, "Gamma", 0.0);
      net.buses.push_back(b);
    }
    for (const auto& jl : required<json>(doc, "lines", "case")) {
      const std::string where = "line record " + jl.dump();
      Line l;
      l.id = required<int>(jl, "id", where);
      l.from = required<int>(jl, "from", where);
      l.to = required<int>(jl, "to", where);
      l.r = required<double>(jl, "R", where);
      l.x = required<double>(jl, "X", where);
      l.rating = required<double>(jl, "S", where) / s;
      net.lines.push_back(l);
    }
    if (doc.contains("generators"))
      for (const auto& jg : doc.at("generators")) {
        const std::string where = "generator record " + jg.dump();
        UtilityGenerator g;
        g.bus = required<int>(jg, "bus", where);
        g.cost = required<double>(jg, "C_u", where);
        g.p_min = optional_field(jg, "P_min", 0.0) / s;
        g.p_max = optional_field(jg, "P_max", 0.0) / s;
        g.q_min = optional_field(jg, "Q_min", 0.0) / s;
        g.q_max = optional_field(jg, "Q_max", 0.0) / s;
        net.generators.push_back(g);
      }
  } catch (const json::exception& e) {
    throw ParseError(std::string("case: ") + e.what());
  }
  net.finalize();
  return net;
}

json case_to_json(const NetworkCase& net) {
  const double s = net.base.mva;
  json doc;
  doc["name"] = net.name;
  doc["base"] = {{"mva", net.base.mva}, {"kv", net.base.kv}};
  doc["root"] = net.root;
  doc["C_w"] = net.wholesale_price;
  doc["root_supply"] = {{"P_min", net.root_supply.p_min * s},
                        {"P_max", net.root_supply.p_max * s},
                        {"Q_min", net.root_supply.q_min * s},
                        {"Q_max", net.root_supply.q_max * s}};
  json buses = json::array();
  for (const auto& b : net.buses)
    buses.push_back({{"id", b.id},
                     {"G", b.shunt_g},
                     {"B", b.shunt_b},
                     {"D_p", b.demand_p * s},
                     {"D_q", b.demand_q * s},
                     {"T", b.tariff},
                     {"V_min", b.v_min},
                     {"V_max", b.v_max},
                     {"Gamma", b.gamma}});
  doc["buses"] = buses;
  json lines = json::array();
  for (const auto& l : net.lines)
    lines.push_back({{"id", l.id}, {"from", l.from}, {"to", l.to}, {"R", l.r}, {"X", l.x}, {"S", l.rating * s}});
  doc["lines"] = lines;
  json gens = json::array();
  for (const auto& g : net.generators)
    gens.push_back({{"bus", g.bus},
                    {"C_u", g.cost},
                    {"P_min", g.p_min * s},
                    {"P_max", g.p_max * s},
                    {"Q_min", g.q_min * s},
                    {"Q_max", g.q_max * s}});
  doc["generators"] = gens;
  return doc;
}

NetworkCase load_case(const std::filesystem::path& path, CaseFormat format) {
  if (format == CaseFormat::json) return case_from_json(read_json(path));
  const json meta = read_json(path / "meta.json");
  MatpowerImport opt;
  opt.base_mva = optional_field(meta, "base_mva", opt.base_mva);
  opt.base_kv = optional_field(meta, "base_kv", opt.base_kv);
  opt.impedance_in_ohm = optional_field(meta, "impedance_in_ohm", opt.impedance_in_ohm);
  opt.load_scale = optional_field(meta, "load_scale", opt.load_scale);
  if (meta.contains("power_factor")) opt.power_factor = meta.at("power_factor").get<double>();
  opt.default_tariff = optional_field(meta, "tariff", opt.default_tariff);
  opt.default_rating_mva = optional_field(meta, "rating_mva", opt.default_rating_mva);
  opt.wholesale_price = optional_field(meta, "C_w", opt.wholesale_price);
  opt.v_min_sq = optional_field(meta, "V_min", opt.v_min_sq);
  opt.v_max_sq = optional_field(meta, "V_max", opt.v_max_sq);
  if (meta.contains("V_root")) opt.root_v_sq = meta.at("V_root").get<double>();
  return import_matpower_tables(path / "bus.csv", path / "branch.csv", opt);
}

// ---------------------------------------------------------------------------
// MATPOWER-style tables

namespace {

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line[0] == '%') continue;
    std::replace(line.begin(), line.end(), ';', ' ');
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::istringstream is(line);
    std::vector<double> row;
    std::string tok;
    while (is >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        if (row.empty() && lineno == 1) goto header;  // tolerate one header line
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
    continue;
  header:;
  }
  return rows;
}

}  // namespace

NetworkCase import_matpower_tables(const std::filesystem::path& bus_csv, const std::filesystem::path& branch_csv,
                                   const MatpowerImport& opt) {
  NetworkCase net;
  net.base.mva = opt.base_mva;
  net.base.kv = opt.base_kv;
  net.wholesale_price = opt.wholesale_price;
  net.name = bus_csv.parent_path().filename().string();
  const double s = opt.base_mva;
  bool have_root = false;
  for (const auto& row : read_numeric_csv(bus_csv)) {
    if (row.size() < 6) throw ParseError(bus_csv.string() + ": bus rows need at least 6 columns");
    Bus b;
    b.id = static_cast<int>(row[0]);
    double pd = row[2] * opt.load_scale;
    double qd = row[3] * opt.load_scale;
    if (opt.power_factor) {
      const double pf = *opt.power_factor;
      qd = pd * std::sin(std::acos(pf));
      pd = pd * pf;
    }
    b.demand_p = pd / s;
    b.demand_q = qd / s;
    // MATPOWER Gs/Bs are MW/MVAr withdrawn/injected at V = 1 p.u.
    b.shunt_g = row[4] / s;
    b.shunt_b = row[5] / s;
    b.tariff = opt.default_tariff;
    b.v_min = opt.v_min_sq;
    b.v_max = opt.v_max_sq;
    if (row.size() > 1 && static_cast<int>(row[1]) == 3) {
      if (have_root) throw ValidationError("bus table declares more than one reference bus");
      net.root = b.id;
      have_root = true;
      if (opt.root_v_sq) b.v_min = b.v_max = *opt.root_v_sq;
    }
    net.buses.push_back(b);
  }
  if (!have_root) throw ValidationError("bus table has no reference bus (type 3)");
  const double zbase = opt.base_kv * opt.base_kv / opt.base_mva;
  int next_id = 1;
  for (const auto& row : read_numeric_csv(branch_csv)) {
    if (row.size() < 4) throw ParseError(branch_csv.string() + ": branch rows need at least 4 columns");
    if (row.size() > 10 && row[10] == 0) continue;  // out of service
    Line l;
    l.id = next_id++;
    l.from = static_cast<int>(row[0]);
    l.to = static_cast<int>(row[1]);
    l.r = opt.impedance_in_ohm ? row[2] / zbase : row[2];
    l.x = opt.impedance_in_ohm ? row[3] / zbase : row[3];
    const double rate = row.size() > 5 ? row[5] : 0.0;
    l.rating = (rate > 0 ? rate : opt.default_rating_mva) / s;
    net.lines.push_back(l);
  }
  net.finalize();
  return net;
}

// ---------------------------------------------------------------------------
// Peers

const SellerSpec* PeerSet::seller_at_bus(int bus) const {
  for (const auto& s : sellers)
    if (s.bus == bus) return &s;
  return nullptr;
}

void PeerSet::refresh_from_case(const NetworkCase& net) {
  for (auto& b : buyers) {
    if (!b.from_case) continue;
    const auto& bus = net.bus(b.bus);
    const double d = bus.gamma * bus.demand_p * net.base.mva;
    b.d_max = d;
    b.d_min = b.inelastic ? d : 0.0;
  }
}

PeerSet peers_from_json(const json& doc, const NetworkCase& net) {
  PeerSet peers;
  std::map<int, Side> sides;
  auto claim = [&](int id, Side side) {
    auto [it, inserted] = sides.emplace(id, side);
    if (!inserted) {
      if (it->second != side)
        throw ValidationError("peer " + std::to_string(id) + " is declared as both seller and buyer");
      throw ValidationError("peer " + std::to_string(id) + " is declared twice");
    }
  };
  auto check_bus = [&](int bus, int id) {
    if (!net.has_bus(bus))
      throw ValidationError("peer " + std::to_string(id) + ": unknown bus " + std::to_string(bus));
  };
  try {
    if (doc.contains("peers"))
      for (const auto& jp : doc.at("peers")) {
        const std::string where = "peer record " + jp.dump();
        const int id = required<int>(jp, "id", where);
        const int bus = required<int>(jp, "bus", where);
        const auto side = required<std::string>(jp, "side", where);
        check_bus(bus, id);
        if (side == "seller") {
          claim(id, Side::seller);
          SellerSpec s;
          s.id = id;
          s.bus = bus;
          s.g_min = optional_field(jp, "G_min", 0.0);
          s.g_max = required<double>(jp, "G_max", where);
          const auto& cost = required<json>(jp, "cost", where);
          if (cost.is_number()) {
            s.cost.linear = cost.get<double>();
          } else {
            s.cost.linear = optional_field(cost, "linear", 0.0);
            s.cost.quadratic = optional_field(cost, "quadratic", 0.0);
          }
          if (!(s.g_min >= 0.0 && s.g_min <= s.g_max))
            throw ValidationError("seller " + std::to_string(id) + ": need 0 <= G_min <= G_max");
          if (s.cost.quadratic < 0)
            throw ValidationError("seller " + std::to_string(id) + ": cost must be convex");
          if (peers.seller_at_bus(bus))
            throw ValidationError("seller " + std::to_string(id) + ": bus " + std::to_string(bus) +
                                  " already hosts a seller");
          peers.sellers.push_back(s);
        } else if (side == "buyer") {
          claim(id, Side::buyer);
          BuyerSpec b;
          b.id = id;
          b.bus = bus;
          b.surplus_value = required<double>(jp, "Upsilon", where);
          b.utility_quadratic = optional_field(jp, "utility_quadratic", 0.0);
          if (jp.contains("D_max") && jp.at("D_max").is_string()) {
            if (jp.at("D_max").get<std::string>() != "from-case")
              throw ParseError(where + ": D_max must be a number or \"from-case\"");
            b.from_case = true;
            b.inelastic = optional_field(jp, "inelastic", true);
          } else {
            b.d_max = required<double>(jp, "D_max", where);
            b.d_min = optional_field(jp, "D_min", 0.0);
            b.from_case = false;
            b.inelastic = b.d_min == b.d_max;
          }
          if (b.utility_quadratic < 0)
            throw ValidationError("buyer " + std::to_string(id) + ": utility must be concave");
          peers.buyers.push_back(b);
        } else {
          throw ParseError(where + ": side must be 'seller' or 'buyer'");
        }
      }
    if (doc.contains("buyers_from_case")) {
      const auto& spec = doc.at("buyers_from_case");
      int next_id = optional_field(spec, "first_id", 1000);
      const double upsilon = required<double>(spec, "Upsilon", "buyers_from_case");
      const bool inelastic = optional_field(spec, "inelastic", true);
      for (const auto& bus : net.buses) {
        if (bus.demand_p <= 0.0) continue;
        BuyerSpec b;
        b.id = next_id++;
        claim(b.id, Side::buyer);
        b.bus = bus.id;
        b.surplus_value = upsilon;
        b.from_case = true;
        b.inelastic = inelastic;
        peers.buyers.push_back(b);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("peers: ") + e.what());
  }
  peers.refresh_from_case(net);
  for (const auto& b : peers.buyers)
    if (!(b.d_min >= 0.0 && b.d_min <= b.d_max + 1e-12))
      throw ValidationError("buyer " + std::to_string(b.id) + ": need 0 <= D_min <= D_max");
  return peers;
}

PeerSet load_peers(const std::filesystem::path& path, const NetworkCase& net) {
  return peers_from_json(read_json(path), net);
}

}  // namespace p2pgrid
