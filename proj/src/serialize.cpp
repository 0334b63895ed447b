#include "rtqp/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace rtqp {

using nlohmann::json;

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Matrix matrix_from_json(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(row.size()) != cols)
      throw std::runtime_error("ragged matrix in JSON");
    for (Index jj = 0; jj < cols; ++jj) m(i, jj) = row.at(static_cast<std::size_t>(jj)).get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json to_json(const QPInstance& p) {
  return json{{"H", to_json(p.H)}, {"G", to_json(p.G)}, {"f", to_json(p.f)},
              {"e", to_json(p.e)}, {"step", p.step}};
}

QPInstance qp_from_json(const json& j) {
  QPInstance p;
  p.H = matrix_from_json(j.at("H"));
  p.G = matrix_from_json(j.at("G"));
  p.f = vector_from_json(j.at("f"));
  p.e = vector_from_json(j.at("e"));
  p.step = j.at("step").get<int>();
  return p;
}

json to_json(const TransformKey& k) {
  json out{{"R", to_json(k.R)}, {"r", to_json(k.r)}, {"step", k.step}};
  if (k.P) {
    json perm = json::array();
    for (Index idx : k.P->map) perm.push_back(idx);
    out["P"] = std::move(perm);
  } else {
    out["P"] = nullptr;
  }
  return out;
}

TransformKey key_from_json(const json& j) {
  TransformKey k;
  k.R = matrix_from_json(j.at("R"));
  k.r = vector_from_json(j.at("r"));
  k.step = j.at("step").get<int>();
  if (!j.at("P").is_null()) {
    std::vector<Index> map;
    for (const auto& e : j.at("P")) map.push_back(e.get<Index>());
    k.P = Permutation{std::move(map)};
  }
  return k;
}

json to_json(const Ciphertext& c) {
  return json{{"H_tilde", to_json(c.H_tilde)}, {"G_tilde", to_json(c.G_tilde)},
              {"f_tilde", to_json(c.f_tilde)}, {"e_tilde", to_json(c.e_tilde)},
              {"permuted", c.permuted},        {"step", c.step}};
}

Ciphertext ciphertext_from_json(const json& j) {
  Ciphertext c;
  c.H_tilde = matrix_from_json(j.at("H_tilde"));
  c.G_tilde = matrix_from_json(j.at("G_tilde"));
  c.f_tilde = vector_from_json(j.at("f_tilde"));
  c.e_tilde = vector_from_json(j.at("e_tilde"));
  c.permuted = j.at("permuted").get<bool>();
  c.step = j.at("step").get<int>();
  return c;
}

namespace {

std::string provenance_name(GuessProvenance p) {
  switch (p) {
    case GuessProvenance::Svd: return "svd";
    case GuessProvenance::Structure: return "structure";
    case GuessProvenance::Composed: return "composed";
    case GuessProvenance::Reconstructed: return "reconstructed";
    case GuessProvenance::Trivial: return "trivial";
    case GuessProvenance::Manual: return "manual";
  }
  return "manual";
}

GuessProvenance provenance_from_name(const std::string& s) {
  if (s == "svd") return GuessProvenance::Svd;
  if (s == "structure") return GuessProvenance::Structure;
  if (s == "composed") return GuessProvenance::Composed;
  if (s == "reconstructed") return GuessProvenance::Reconstructed;
  if (s == "trivial") return GuessProvenance::Trivial;
  return GuessProvenance::Manual;
}

}  // namespace

json to_json(const Guess& g) {
  return json{{"H_hat", to_json(g.H_hat)}, {"G_hat", to_json(g.G_hat)},
              {"f_hat", to_json(g.f_hat)}, {"e_hat", to_json(g.e_hat)},
              {"R_hat", to_json(g.R_hat)}, {"r_hat", to_json(g.r_hat)},
              {"provenance", provenance_name(g.provenance)}};
}

Guess guess_from_json(const json& j) {
  Guess g;
  g.H_hat = matrix_from_json(j.at("H_hat"));
  g.G_hat = matrix_from_json(j.at("G_hat"));
  g.f_hat = vector_from_json(j.at("f_hat"));
  g.e_hat = vector_from_json(j.at("e_hat"));
  g.R_hat = matrix_from_json(j.at("R_hat"));
  g.r_hat = vector_from_json(j.at("r_hat"));
  g.provenance = provenance_from_name(j.at("provenance").get<std::string>());
  return g;
}

json to_json(const ScenarioConfig& c) {
  return json{{"scenario", c.scenario == ScenarioKind::Setpoint ? "setpoint" : "tracking"},
              {"steps", c.steps},
              {"permute", c.permute},
              {"key_range", json::array({c.key_lo, c.key_hi})},
              {"seed", c.seed},
              {"tolerances", json{{"constancy", c.tolerances.constancy},
                                  {"consistency", c.tolerances.consistency},
                                  {"rank", c.tolerances.rank}}},
              {"output_dir", c.output_dir},
              {"circle_phase", c.circle_phase}};
}

ScenarioConfig scenario_config_from_json(const json& j) {
  ScenarioConfig c;
  const std::string kind = j.at("scenario").get<std::string>();
  if (kind == "setpoint") {
    c.scenario = ScenarioKind::Setpoint;
  } else if (kind == "tracking") {
    c.scenario = ScenarioKind::Tracking;
  } else {
    throw std::runtime_error("unknown scenario '" + kind + "'");
  }
  c.steps = j.at("steps").get<int>();
  c.permute = j.at("permute").get<bool>();
  c.key_lo = j.at("key_range").at(0).get<double>();
  c.key_hi = j.at("key_range").at(1).get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.tolerances.constancy = j.at("tolerances").at("constancy").get<double>();
  c.tolerances.consistency = j.at("tolerances").at("consistency").get<double>();
  c.tolerances.rank = j.at("tolerances").at("rank").get<double>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.circle_phase = j.value("circle_phase", ScenarioConfig{}.circle_phase);
  return c;
}

json to_json(const EpisodeLog& log) {
  json records = json::array();
  for (const auto& rec : log.records) {
    records.push_back(json{{"k", rec.k},
                           {"qp", to_json(rec.qp)},
                           {"key", to_json(rec.key)},
                           {"ciphertext", to_json(rec.ct)},
                           {"y_star", to_json(rec.y_star)},
                           {"z_star", to_json(rec.z_star)},
                           {"x", to_json(rec.x)},
                           {"u", to_json(rec.u)}});
  }
  json out{{"records", std::move(records)}, {"x_final", to_json(log.x_final)}};
  out["config"] = log.config ? to_json(*log.config) : json(nullptr);
  return out;
}

EpisodeLog episode_from_json(const json& j) {
  EpisodeLog log;
  for (const auto& r : j.at("records")) {
    EpisodeRecord rec;
    rec.k = r.at("k").get<int>();
    rec.qp = qp_from_json(r.at("qp"));
    rec.key = key_from_json(r.at("key"));
    rec.ct = ciphertext_from_json(r.at("ciphertext"));
    rec.y_star = vector_from_json(r.at("y_star"));
    rec.z_star = vector_from_json(r.at("z_star"));
    rec.x = vector_from_json(r.at("x"));
    rec.u = vector_from_json(r.at("u"));
    log.records.push_back(std::move(rec));
  }
  log.x_final = vector_from_json(j.at("x_final"));
  if (!j.at("config").is_null()) log.config = scenario_config_from_json(j.at("config"));
  return log;
}

json to_json(const SpecReport& r) {
  json out{{"spec1", r.spec1},
           {"spec3_sets", r.spec3_sets},
           {"tolerance_used", r.tolerance_used}};
  out["period_estimate"] = r.period_estimate ? json(*r.period_estimate) : json(nullptr);
  return out;
}

json to_json(const AttackMetrics& m) {
  return json{{"spec", to_json(m.spec)},
              {"guess_mode", m.guess_mode},
              {"steps", m.steps},
              {"u_hat", to_json(m.u_hat)},
              {"u_true", to_json(m.u_true)},
              {"per_step_abs_error", to_json(m.per_step_abs_error)},
              {"offset_estimate", to_json(m.offset_estimate)},
              {"error_std", to_json(m.error_std)},
              {"max_abs_error", m.max_abs_error},
              {"k_used", m.k_used},
              {"pin_step", m.pin_step},
              {"rank", m.rank},
              {"nullspace_dim", m.nullspace_dim},
              {"perm_recovery_rate", m.perm_recovery_rate}};
}

namespace {

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void save_episode(const EpisodeLog& log, const std::string& path) {
  write_text_file(path, to_json(log).dump());
}

EpisodeLog load_episode(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  json j = json::parse(in);
  return episode_from_json(j);
}

void save_metrics(const AttackMetrics& m, const std::string& path) {
  write_text_file(path, to_json(m).dump(2));
}

void write_trajectory_csv(const EpisodeLog& log, const std::string& path) {
  if (log.records.empty()) throw std::runtime_error("empty episode");
  const Index n = log.records[0].x.size();
  const Index m = log.records[0].u.size();

  MPCConfig cfg;
  bool have_ref = false;
  if (log.config) {
    cfg = scenario_mpc_config(log.config->scenario, log.config->circle_phase);
    have_ref = true;
  }
  const Index p = have_ref ? cfg.Q_weight.rows() : 2;

  std::string out = "k";
  for (Index i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
  for (Index i = 1; i <= m; ++i) out += ",u" + std::to_string(i);
  for (Index i = 1; i <= p; ++i) out += ",yref" + std::to_string(i);
  out += "\n";
  for (const auto& rec : log.records) {
    out += std::to_string(rec.k);
    for (Index i = 0; i < n; ++i) out += "," + format_double(rec.x[i]);
    for (Index i = 0; i < m; ++i) out += "," + format_double(rec.u[i]);
    Vector ref = Vector::Zero(p);
    if (have_ref) ref = reference(cfg, rec.k)[0];
    for (Index i = 0; i < p; ++i) out += "," + format_double(ref[i]);
    out += "\n";
  }
  write_text_file(path, out);
}

void write_ciphertext_norms_csv(const EpisodeLog& log, const std::string& path) {
  std::string out = "k,v_norm\n";
  for (const auto& rec : log.records) {
    out += std::to_string(rec.k) + "," + format_double(invariants(rec.ct).v.norm()) + "\n";
  }
  write_text_file(path, out);
}

void write_reconstructed_inputs_csv(const AttackMetrics& m, const std::string& path) {
  const Index cols = m.u_hat.cols();
  std::string out = "k";
  for (Index i = 1; i <= cols; ++i) out += ",uhat" + std::to_string(i);
  for (Index i = 1; i <= cols; ++i) out += ",u" + std::to_string(i);
  out += "\n";
  for (std::size_t r = 0; r < m.steps.size(); ++r) {
    out += std::to_string(m.steps[r]);
    for (Index i = 0; i < cols; ++i) out += "," + format_double(m.u_hat(static_cast<Index>(r), i));
    for (Index i = 0; i < cols; ++i) out += "," + format_double(m.u_true(static_cast<Index>(r), i));
    out += "\n";
  }
  write_text_file(path, out);
}

}  // namespace rtqp
