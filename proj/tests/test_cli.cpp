#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "ufcmil/bagio.hpp"
#include "ufcmil/config.hpp"
#include "ufcmil/params.hpp"

using namespace ufcmil;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ufcmil_cli_test";

int cli(const std::string& args, const std::string& capture = "/dev/null") {
  const std::string cmd = std::string(UFCMIL_CLI) + " " + args + " >" + capture + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// A small dataset shared by the cases below.
const fs::path& dataset() {
  static const fs::path dir = [] {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    const fs::path d = kRoot / "data";
    REQUIRE(cli("generate --out " + d.string() +
                " --samples 40 --levels 2 --grid 2x2 --dim 8 --seed 7 --pos-frac 0.5") == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("generate") {
  const fs::path d = kRoot / "gen";
  fs::create_directories(kRoot);
  REQUIRE(cli("generate --out " + d.string() + " --samples 40 --levels 3 --grid 4x4 --dim 16 --seed 7") == 0);
  const auto ds = load_dataset(d);
  REQUIRE(ds.bags.size() == 40);
  CHECK(ds.bags[0].levels[0].num_patches() == 16);
  CHECK(ds.bags[0].levels[1].num_patches() == 64);
  CHECK(ds.bags[0].levels[2].num_patches() == 256);

  REQUIRE(cli("generate --out " + (kRoot / "gen2").string() +
              " --samples 40 --levels 3 --grid 4x4 --dim 16 --seed 7") == 0);
  CHECK(slurp(d / "manifest.json") == slurp(kRoot / "gen2" / "manifest.json"));
  CHECK(slurp(d / ds.manifest.entries[5].levels[2].path) ==
        slurp(kRoot / "gen2" / ds.manifest.entries[5].levels[2].path));

  CHECK(cli("generate --out " + (kRoot / "bad").string() + " --pos-frac 1.5") == 1);
  CHECK(cli("generate --out " + (kRoot / "bad").string() + " --grid 4by4") == 1);
  CHECK(cli("frobnicate") == 1);
}

TEST_CASE("train and eval") {
  const fs::path data = dataset();
  const fs::path zero = kRoot / "zero";
  REQUIRE(cli("train --data " + data.string() + " --out " + zero.string() +
              " --epochs 0 --hidden 8 --seed 4") == 0);
  ModelConfig mc;
  mc.dim = 8;
  mc.levels = 2;
  mc.hidden = 8;
  CHECK(load_checkpoint(zero / "checkpoint.ufcm") == init_params(mc, 4));

  // An untrained model is near chance on balanced data. Its AUC is not: a
  // random projection of the planted direction still ranks bags, in an
  // arbitrary direction, so only the accuracy band is asserted.
  const fs::path report = kRoot / "zero.json";
  REQUIRE(cli("eval --data " + data.string() + " --checkpoint " + (zero / "checkpoint.ufcm").string() +
              " --config " + (zero / "config.json").string() + " --split train --out-json " +
              report.string()) == 0);
  const auto j = nlohmann::json::parse(slurp(report));
  CHECK(j["accuracy"].get<double>() >= 0.3);
  CHECK(j["accuracy"].get<double>() <= 0.7);
  MESSAGE("untrained AUC " << j["auc"].get<double>());

  const fs::path a = kRoot / "a", b = kRoot / "b";
  for (const auto& out : {a, b})
    REQUIRE(cli("train --data " + data.string() + " --out " + out.string() +
                " --epochs 3 --hidden 8 --srls --record-epoch 2 --lr 1e-3") == 0);
  CHECK(slurp(a / "checkpoint.ufcm") == slurp(b / "checkpoint.ufcm"));
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(fs::file_size(a / "srls_stats.csv") > 0);

  const std::string eval = "eval --data " + data.string() + " --checkpoint " +
                           (a / "checkpoint.ufcm").string() + " --config " +
                           (a / "config.json").string();
  REQUIRE(cli(eval, (kRoot / "e1.json").string()) == 0);
  REQUIRE(cli(eval, (kRoot / "e2.json").string()) == 0);
  CHECK(slurp(kRoot / "e1.json") == slurp(kRoot / "e2.json"));
  CHECK(nlohmann::json::parse(slurp(kRoot / "e1.json")).contains("ece"));
  CHECK(cli(eval + " --temperature --out-csv " + (kRoot / "rel.csv").string()) == 0);
  CHECK(slurp(kRoot / "rel.csv").rfind("lo,hi,count,acc,conf\n", 0) == 0);
}

TEST_CASE("error exit codes") {
  const fs::path data = dataset();
  CHECK(cli("train --data " + (kRoot / "nowhere").string() + " --out " + (kRoot / "x").string()) == 2);
  CHECK(cli("train --data " + data.string() + " --out " + (kRoot / "x").string() + " --lr -1") == 1);

  const fs::path cfg = kRoot / "bad_config.json";
  std::ofstream(cfg) << R"({"epochs": 1, "colour": "blue"})";
  CHECK(cli("train --data " + data.string() + " --out " + (kRoot / "x").string() + " --config " +
            cfg.string()) == 1);

  std::ofstream(kRoot / "garbage.ufcm") << "not a checkpoint";
  CHECK(cli("eval --data " + data.string() + " --checkpoint " + (kRoot / "garbage.ufcm").string()) == 2);

  // A checkpoint for a different architecture is a data error.
  const fs::path wide = kRoot / "wide";
  REQUIRE(cli("train --data " + data.string() + " --out " + wide.string() + " --epochs 0 --hidden 16") == 0);
  CHECK(cli("eval --data " + data.string() + " --checkpoint " + (wide / "checkpoint.ufcm").string() +
            " --hidden 8") == 2);
}

TEST_CASE("run config") {
  RunConfig rc;
  apply_json(nlohmann::json::parse(R"({"epochs": 7, "lr": 0.002, "record_epoch": 5, "hidden": 4})"), rc);
  CHECK(rc.train.epochs == 7);
  CHECK(rc.train.lr == 0.002);
  CHECK(rc.train.record_epoch == 5);
  CHECK(rc.model.hidden == 4);
  CHECK_THROWS_AS(apply_json(nlohmann::json::parse(R"({"nope": 1})"), rc), ConfigError);
  CHECK_THROWS_AS(apply_json(nlohmann::json::parse("[1, 2]"), rc), ConfigError);

  RunConfig back;
  apply_json(nlohmann::json::parse(to_json(rc).dump()), back);
  CHECK(to_json(back) == to_json(rc));
}

TEST_CASE("gradcheck command") {
  const fs::path o1 = kRoot / "gc1.txt", o2 = kRoot / "gc2.txt", coarse = kRoot / "gc3.txt";
  fs::create_directories(kRoot);
  CHECK(cli("gradcheck", o1.string()) == 0);
  CHECK(cli("gradcheck", o2.string()) == 0);
  CHECK(slurp(o1) == slurp(o2));
  const int rc = cli("gradcheck --h 1e-1", coarse.string());
  CHECK((rc == 0 || rc == 3));
  auto max_error = [](const std::string& text) {
    const auto at = text.find("max relative error");
    REQUIRE(at != std::string::npos);
    return std::stod(text.substr(text.find_first_of("0123456789", at)));
  };
  CHECK(max_error(slurp(coarse)) > max_error(slurp(o1)));
}
