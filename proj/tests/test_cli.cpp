#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rearec/cli.hpp"
#include "rearec/data.hpp"
#include "rearec/training.hpp"

using namespace rearec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> argv = {"rearec"};
  argv.insert(argv.end(), args);
  return cli::dispatch(argv);
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("rearec_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("unknown subcommands and flags exit 1") {
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"synth", "--no-such-flag", "1", "--out", "/tmp/x.tsv"}) == 1);
  CHECK(run({}) == 1);
}

TEST_CASE("help exits 0") {
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("synth is byte-deterministic and feeds prepare") {
  Workspace ws;
  CHECK(run({"synth", "--seed", "7", "--users", "60", "--items", "40", "--out",
             ws.p("a.tsv")}) == 0);
  CHECK(run({"synth", "--seed", "7", "--users", "60", "--items", "40", "--out",
             ws.p("b.tsv")}) == 0);
  CHECK(slurp(ws.p("a.tsv")) == slurp(ws.p("b.tsv")));

  CHECK(run({"synth", "--seed", "8", "--users", "60", "--items", "40", "--out",
             ws.p("c.tsv")}) == 0);
  CHECK(slurp(ws.p("a.tsv")) != slurp(ws.p("c.tsv")));

  CHECK(run({"prepare", "--in", ws.p("a.tsv"), "--out", ws.p("data.json"), "--min-rating",
             "3", "--k-core", "2"}) == 0);
  auto ds = data::load_dataset(ws.p("data.json"));
  CHECK(ds.example_count(data::Split::kTrain) > 0);
  CHECK(ds.example_count(data::Split::kValid) > 0);
  CHECK(ds.example_count(data::Split::kTest) > 0);
}

TEST_CASE("prepare propagates data errors as exit 2") {
  Workspace ws;
  {
    std::ofstream out(ws.p("bad.tsv"));
    out << "u1\ti1\tnotanumber\t10\n";
  }
  CHECK(run({"prepare", "--in", ws.p("bad.tsv"), "--out", ws.p("never.json")}) == 2);
  CHECK(run({"prepare", "--in", ws.p("missing.tsv"), "--out", ws.p("never.json")}) == 2);
}

TEST_CASE("train, eval and the analysis subcommands produce their artifacts") {
  Workspace ws;
  REQUIRE(run({"synth", "--seed", "11", "--users", "50", "--items", "30", "--len-min", "6",
               "--len-max", "10", "--out", ws.p("log.tsv")}) == 0);
  REQUIRE(run({"prepare", "--in", ws.p("log.tsv"), "--out", ws.p("data.json"), "--k-core",
               "2"}) == 0);

  std::ofstream cfg(ws.p("run.cfg"));
  cfg << "# tiny run\n"
      << "d = 8\n"
      << "layers = 1\n"
      << "heads = 1\n"
      << "k_max = 2\n"
      << "dropout = 0\n"
      << "max_epochs = 2\n"
      << "batch_size = 64\n"
      << "learning_rate = 0.003\n"
      << "seed = 5\n";
  cfg.close();

  REQUIRE(run({"train", "--config", ws.p("run.cfg"), "--data", ws.p("data.json"),
               "--objective", "prl", "--k", "2", "--out-dir", ws.p("run")}) == 0);
  const fs::path ckpt = fs::path(ws.p("run")) / "model.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(fs::path(ws.p("run")) / "history.csv"));

  auto [params, meta] = training::load_checkpoint(ckpt);
  CHECK(meta.encoder.d == 8);
  CHECK(meta.train.objective == objectives::Objective::kPrl);
  CHECK(meta.train.k_steps == 2);

  SUBCASE("eval emits one row per step and metric") {
    REQUIRE(run({"eval", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
                 "--steps", "0,1,2", "--out-dir", ws.p("eval")}) == 0);
    const std::string csv = slurp(fs::path(ws.p("eval")) / "metrics.csv");
    // header + 3 steps x 4 metrics
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    CHECK(csv.find("ndcg@10") != std::string::npos);
    CHECK(csv.find("recall@20") != std::string::npos);
    CHECK(fs::exists(fs::path(ws.p("eval")) / "metrics.json"));
  }

  SUBCASE("groups, oracle, trace, similarity and bench run end to end") {
    CHECK(run({"groups", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
               "--kind", "user_by_length", "--groups", "2", "--steps", "0,1", "--out-dir",
               ws.p("groups")}) == 0);
    CHECK(slurp(fs::path(ws.p("groups")) / "groups.csv").find("all") != std::string::npos);

    CHECK(run({"oracle", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
               "--k-max", "2", "--out-dir", ws.p("oracle")}) == 0);
    CHECK(slurp(fs::path(ws.p("oracle")) / "oracle.csv").find("oracle") !=
          std::string::npos);

    auto ds = data::load_dataset(ws.p("data.json"));
    std::string user;
    for (const auto& e : ds.examples)
      if (e.split == data::Split::kTest) {
        user = ds.user_ids[e.user];
        break;
      }
    REQUIRE(!user.empty());
    CHECK(run({"trace", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
               "--users", user, "--k", "2", "--out-dir", ws.p("trace")}) == 0);
    const std::string traj = slurp(fs::path(ws.p("trace")) / "trajectories.csv");
    CHECK(std::count(traj.begin(), traj.end(), '\n') == 4);  // header + ranks 0..2

    CHECK(run({"similarity", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
               "--users", user, "--k", "2", "--out-dir", ws.p("sim")}) == 0);
    const std::string sim = slurp(fs::path(ws.p("sim")) / "similarity.csv");
    CHECK(std::count(sim.begin(), sim.end(), '\n') == 10);  // header + 3x3 matrix

    CHECK(run({"bench", "--checkpoint", ckpt.string(), "--data", ws.p("data.json"),
               "--steps", "0,1", "--max-examples", "5", "--out-dir", ws.p("bench")}) == 0);
    const std::string latency = slurp(fs::path(ws.p("bench")) / "latency.csv");
    CHECK(latency.find("cached") != std::string::npos);
    CHECK(latency.find("uncached") != std::string::npos);
  }

  SUBCASE("eval rejects a mismatched dataset") {
    REQUIRE(run({"synth", "--seed", "30", "--users", "40", "--items", "12", "--out",
                 ws.p("other.tsv")}) == 0);
    REQUIRE(run({"prepare", "--in", ws.p("other.tsv"), "--out", ws.p("other.json"),
                 "--k-core", "2"}) == 0);
    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--data", ws.p("other.json"),
               "--out-dir", ws.p("bad_eval")}) == 2);
  }
}

TEST_CASE("config files reject unknown keys and flags override values") {
  Workspace ws;
  {
    std::ofstream cfg(ws.p("bad.cfg"));
    cfg << "learning_rate = 0.01\nwarp_speed = 9\n";
  }
  CHECK_THROWS_AS(cli::parse_config_file(ws.p("bad.cfg")), ConfigError);

  {
    std::ofstream cfg(ws.p("good.cfg"));
    cfg << "learning_rate = 0.01  # comment\n\nd = 16\n";
  }
  auto entries = cli::parse_config_file(ws.p("good.cfg"));
  CHECK(entries.at("learning_rate") == "0.01");
  CHECK(entries.at("d") == "16");

  // Flag wins over config: train with config d=16 overridden to d=8.
  REQUIRE(run({"synth", "--seed", "3", "--users", "40", "--items", "20", "--out",
               ws.p("log.tsv")}) == 0);
  REQUIRE(run({"prepare", "--in", ws.p("log.tsv"), "--out", ws.p("data.json"), "--k-core",
               "2"}) == 0);
  {
    std::ofstream cfg(ws.p("run.cfg"));
    cfg << "d = 16\nlayers = 1\nheads = 1\nmax_epochs = 1\ndropout = 0\n";
  }
  REQUIRE(run({"train", "--config", ws.p("run.cfg"), "--data", ws.p("data.json"), "--d",
               "8", "--out-dir", ws.p("run2")}) == 0);
  auto [params, meta] = training::load_checkpoint(fs::path(ws.p("run2")) / "model.ckpt");
  CHECK(meta.encoder.d == 8);

  // Unknown config key in a train invocation is a usage error.
  {
    std::ofstream cfg(ws.p("unknown.cfg"));
    cfg << "mystery = 1\n";
  }
  CHECK(run({"train", "--config", ws.p("unknown.cfg"), "--data", ws.p("data.json")}) == 1);
}
