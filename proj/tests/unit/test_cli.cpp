#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hallu/cli.hpp"
#include "hallu/embeddings.hpp"
#include "hallu/errors.hpp"
#include "hallu/json_io.hpp"
#include "support.hpp"

using namespace hallu;
namespace fs = std::filesystem;

namespace {

/// Runs the CLI binary through the shell; `env` is prepended verbatim.
int hallu_cli(const std::string& args, const std::string& env = "env -u HALLU_SEED") {
  const std::string cmd = env + " " + HALLU_BIN + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json without_timing(Json j) {
  j.erase("timing");
  return j;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Two well-separated classes in 6-D, written as EMB1 plus manifest.
void write_embeddings(const fs::path& dir, int per_class, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 0.4);
  EmbeddingMatrix m;
  m.classes = {"a", "b"};
  m.data.resize(2 * per_class, 6);
  for (int r = 0; r < 2 * per_class; ++r) {
    const int c = r % 2;
    for (int j = 0; j < 6; ++j) m.data(r, j) = 1.0 + (j == c ? 4.0 : 0.0) + z(gen);
    m.labels.push_back(c);
  }
  m.source = "synthetic";
  write_emb1((dir / "emb.bin").string(), m.data);
  write_manifest((dir / "emb.json").string(), m);
}

}  // namespace

TEST_CASE("seed resolution precedence") {
  std::string src;
  const Json cfg{{"seed", 5}};
  CHECK(cli::resolve_seed(9, "7", cfg, &src) == 9);
  CHECK(src == "flag");
  CHECK(cli::resolve_seed(std::nullopt, "7", cfg, &src) == 7);
  CHECK(src == "env");
  CHECK(cli::resolve_seed(std::nullopt, nullptr, cfg, &src) == 5);
  CHECK(src == "config");
  CHECK(cli::resolve_seed(std::nullopt, nullptr, Json::object(), &src) == 0);
  CHECK(src == "default");
  CHECK_THROWS_AS(cli::resolve_seed(std::nullopt, "seven", cfg, &src), InputError);
  CHECK(cli::config_hash(Json{{"a", 1}}) == cli::config_hash(Json::parse(R"({ "a" : 1 })")));
  CHECK(cli::config_hash(Json{{"a", 1}}) != cli::config_hash(Json{{"a", 2}}));
}

TEST_CASE("construct exit codes and report") {
  const auto dir = support::scratch("cli-construct");
  write_text(dir / "ok.json", R"({"theorem":"5.1","dim":1,"weights":[0.5,0.5],"delta":0.1})");
  CHECK(hallu_cli("construct --config " + q(dir / "ok.json") + " --out " + q(dir / "ok")) == 0);
  const Json rep = read_json_file((dir / "ok" / "construct.json").string());
  CHECK(rep.at("schema") == "v1");
  CHECK(rep.at("command") == "construct");
  CHECK(rep.at("config_hash").get<std::string>().size() == 16);

  write_text(dir / "bad.json", R"({"theorem":"5.1", "dim":1,)");
  CHECK(hallu_cli("construct --config " + q(dir / "bad.json") + " --out " + q(dir / "bad")) == 2);
  write_text(dir / "delta.json", R"({"theorem":"5.1","dim":1,"weights":[0.5,0.5],"delta":1.5})");
  CHECK(hallu_cli("construct --config " + q(dir / "delta.json") + " --out " + q(dir / "d")) == 2);
  write_text(dir / "inf.json",
             R"({"theorem":"5.1","dim":1,"weights":[0.5,0.5],"delta":0.9,
                 "components":[{"mean":[0],"cov":{"kind":"iso","value":10.0}}]})");
  CHECK(hallu_cli("construct --config " + q(dir / "inf.json") + " --out " + q(dir / "inf")) == 3);
  CHECK(hallu_cli("construct --config " + q(dir / "absent.json")) == 2);
  CHECK(hallu_cli("frobnicate") == 2);
}

TEST_CASE("bound command and verification") {
  const auto dir = support::scratch("cli-bound");
  write_text(dir / "b.json", R"({"weights":[0.5,0.5],
    "mean_laws":[{"family":"gaussian","mu0":0,"param":1},{"family":"gaussian","mu0":0,"param":1}],
    "r_x":0.1,"delta":0.1,"component_variance":0.001})");
  CHECK(hallu_cli("bound --config " + q(dir / "b.json") + " --out " + q(dir / "s")) == 0);
  const Json rep = read_json_file((dir / "s" / "bound.json").string());
  const double product = rep.at("outputs").at("product_bound").get<double>();
  CHECK(product == doctest::Approx(9.2e-6).epsilon(0.2));
  CHECK(hallu_cli("bound --config " + q(dir / "b.json") + " --verify trials=20000 --out " + q(dir / "v")) == 0);
  CHECK(hallu_cli("bound --config " + q(dir / "b.json") + " --d-variant proof --out " + q(dir / "p")) == 3);
  CHECK(hallu_cli("bound --config " + q(dir / "b.json") + " --d-variant sideways --out " + q(dir / "x")) == 2);
}

TEST_CASE("seed precedence through the binary") {
  const auto dir = support::scratch("cli-seed");
  write_text(dir / "c.json", R"({"n":5,"p_low":0.1,"p_high":0.9,"flips":500,"train":{"epochs":2},"seed":11})");
  auto seed_of = [&](const std::string& args, const std::string& env) {
    REQUIRE(hallu_cli("coinflip --config " + q(dir / "c.json") + " --out " + q(dir / "o") + " " + args, env) == 0);
    const Json v = read_json_file((dir / "o" / "verdict.json").string());
    return std::make_pair(v.at("seed").get<std::uint64_t>(), v.at("seed_source").get<std::string>());
  };
  CHECK(seed_of("--seed 3", "HALLU_SEED=7") == std::make_pair(std::uint64_t{3}, std::string("flag")));
  CHECK(seed_of("", "HALLU_SEED=7") == std::make_pair(std::uint64_t{7}, std::string("env")));
  CHECK(seed_of("", "env -u HALLU_SEED") == std::make_pair(std::uint64_t{11}, std::string("config")));
}

TEST_CASE("coinflip reports regenerate byte-identically apart from timing") {
  const auto dir = support::scratch("cli-coin");
  write_text(dir / "c.json", R"({"n":20,"p_low":0.05,"p_high":0.95,"flips":4000,"write_dataset":true,"seed":2})");
  REQUIRE(hallu_cli("coinflip --config " + q(dir / "c.json") + " --out " + q(dir / "r1") + " --workers 1") == 0);
  REQUIRE(hallu_cli("coinflip --config " + q(dir / "c.json") + " --out " + q(dir / "r2") + " --workers 3") == 0);
  for (const char* f : {"trace.csv", "dataset.csv"}) CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
  auto v1 = without_timing(read_json_file((dir / "r1" / "verdict.json").string()));
  auto v2 = without_timing(read_json_file((dir / "r2" / "verdict.json").string()));
  CHECK(v1.dump() == v2.dump());
  const std::string trace = slurp(dir / "r1" / "trace.csv");
  CHECK(trace.substr(0, trace.find('\n')).find(',') != std::string::npos);
  CHECK(v1.at("outputs").at("bayes").at("hallucinates") == true);
}

TEST_CASE("detector bundle lifecycle") {
  const auto dir = support::scratch("cli-detector");
  write_embeddings(dir, 300, 8);
  write_text(dir / "fit.json", R"({"embeddings":"emb.bin","manifest":"emb.json","seed":4,
    "pca":{"components":3},"gmm":{"components":2},"percentile":10,
    "inputs":{"embeddings":"emb.bin","manifest":"emb.json"},
    "checkpoints":[{"checkpoint":2,"embeddings":"emb.bin","manifest":"emb.json","training_loss":0.5},
                   {"checkpoint":1,"embeddings":"emb.bin","training_loss":0.9}]})");
  const std::string cfg = "--config " + q(dir / "fit.json");
  REQUIRE(hallu_cli("detector fit " + cfg + " --out " + q(dir / "a")) == 0);
  for (const char* f : {"pipeline.json", "model.json", "thresholds.json", "manifest.json"})
    CHECK(fs::exists(dir / "a" / "bundle" / f));
  REQUIRE(hallu_cli("detector fit " + cfg + " --out " + q(dir / "b")) == 0);
  for (const char* f : {"pipeline.json", "model.json", "thresholds.json", "manifest.json"})
    CHECK(slurp(dir / "a" / "bundle" / f) == slurp(dir / "b" / "bundle" / f));

  CHECK(hallu_cli("detector calibrate " + cfg + " --out " + q(dir / "a")) == 0);
  CHECK(hallu_cli("detector detect " + cfg + " --out " + q(dir / "a")) == 0);
  const Json det = read_json_file((dir / "a" / "detect.json").string());
  const double rate = det.at("outputs").at("summary").at("hallucination_rate").get<double>();
  CHECK(rate >= 0.0);
  CHECK(rate <= 0.3);
  CHECK(fs::exists(dir / "a" / "detect.csv"));
  CHECK(hallu_cli("detector report " + cfg + " --out " + q(dir / "a")) == 0);
  const std::string trace = slurp(dir / "a" / "hallucination_rate.csv");
  CHECK(trace.rfind("checkpoint,hallucination_rate,training_loss\n1,", 0) == 0);

  fs::remove(dir / "b" / "bundle" / "thresholds.json");
  CHECK(hallu_cli("detector detect " + cfg + " --out " + q(dir / "b")) == 4);
  fs::remove_all(dir / "b" / "bundle");
  CHECK(hallu_cli("detector detect " + cfg + " --out " + q(dir / "b")) == 4);
}

TEST_CASE("hdr plot-data reproduces two conditional intervals and one marginal region") {
  const auto dir = support::scratch("cli-hdr");
  write_text(dir / "m.json", R"({"mixture":{"weights":[0.5,0.5],"components":[
      {"mean":[-1.5],"cov":{"kind":"iso","value":1.0}},{"mean":[1.5],"cov":{"kind":"iso","value":1.0}}]},
      "mass":0.9,"state_mass":0.9})");
  REQUIRE(hallu_cli("hdr plot-data --config " + q(dir / "m.json") + " --out " + q(dir / "o")) == 0);
  const Json rep = read_json_file((dir / "o" / "hdr.json").string());
  const auto& out = rep.at("outputs");
  CHECK(out.at("hdr_intervals").size() == 1);
  CHECK(out.at("states").size() == 2);
  for (const auto& s : out.at("states")) CHECK(s.at("intervals").size() == 1);
  // Each conditional interval is mean ± z_0.95.
  const double lo0 = out.at("states")[0].at("intervals")[0][0].get<double>();
  CHECK(std::abs(lo0 - (-1.5 - 1.6448536)) < 0.01);

  std::ifstream csv(dir / "o" / "hdr.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "x,density,in_hdr,in_state_0,in_state_1,in_hcdr");
  std::string line;
  std::size_t rows = 0;
  bool union_ok = true;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    union_ok = union_ok && ((cells[3] == "1" || cells[4] == "1") == (cells[5] == "1"));
    ++rows;
  }
  CHECK(rows == out.at("grid_cells").get<std::size_t>());
  CHECK(union_ok);

  write_text(dir / "m3.json", R"({"mixture":{"weights":[1.0],"components":[
      {"mean":[0,0,0],"cov":{"kind":"iso","value":1.0}}]},"mass":0.9})");
  CHECK(hallu_cli("hdr plot-data --config " + q(dir / "m3.json") + " --out " + q(dir / "o3")) == 2);
}
