#include <doctest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "dpo/io.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(# small synthetic pipeline
seed = 7

[synthetic]
model = "regime"
T = 300
S = 10
C_true = 2

[window]
H = 40
C = 2

[network]
H = 16
Hp = 8
psi1_hidden = [8]
K = 4
psi2_hidden = [8]
Q = 4
n_taus = 3
dropout_rate = 0.1
mlp_hidden = [8]

[training]
epochs = 2
batch_size = 128
learning_rate = 0.005

[backtest]
strategies = ["market", "ar1", "dpo"]

[sweep]
Cs = [0, 1, 2]

[stability]
Cs = [0, 2]
)";

struct Run {
    int code = 0;
    std::string err;
};

Run run_cli(const std::string& args, const fs::path& dir) {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string(DPO_CLI_PATH) + " --log-level off " + args + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = fs::exists(err) ? dpo::io::read_file(err) : "";
    return r;
}

}  // namespace

TEST_CASE("a missing seed is named in the error") {
    const auto dir = testing::scratch("cli_seed");
    testing::write_text(dir / "c.toml", "[window]\nH = 40\n");
    const auto r = run_cli("--config " + (dir / "c.toml").string() + " --out " + (dir / "o").string() + " simulate", dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("seed") != std::string::npos);
}

TEST_CASE("unknown keys are all listed") {
    const auto dir = testing::scratch("cli_unknown");
    testing::write_text(dir / "c.toml", "seed = 1\nbogus = 2\n[window]\nwidth = 3\n");
    const auto r = run_cli("--config " + (dir / "c.toml").string() + " --set network.colour=red simulate", dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("bogus") != std::string::npos);
    CHECK(r.err.find("window.width") != std::string::npos);
    CHECK(r.err.find("network.colour") != std::string::npos);
}

TEST_CASE("bad command line usage fails") {
    const auto dir = testing::scratch("cli_usage");
    CHECK(run_cli("", dir).code != 0);
    CHECK(run_cli("frobnicate", dir).code != 0);
}

TEST_CASE("small synthetic pipeline end to end") {
    const auto dir = testing::scratch("cli_pipeline");
    const auto cfg = testing::write_text(dir / "c.toml", kSmallConfig);
    const auto out = dir / "out";
    const std::string base = "--config " + cfg.string() + " --out " + out.string() + " ";
    for (std::string cmd : {"simulate", "extract", "train", "backtest", "sweep-c", "stability"}) {
        CAPTURE(cmd);
        const auto r = run_cli(base + cmd, dir);
        CHECK(r.code == 0);
        if (r.code != 0) MESSAGE(r.err);
    }
    for (std::string f : {"prices.csv", "market.json", "factors.csv", "simulate.json", "residuals.csv", "diagnostics.json",
                          "checkpoint.json", "learning_curve.csv", "forecasts.csv", "train.json", "report.json",
                          "market/returns.csv", "ar1/weights.csv", "dpo/forecasts.csv", "dpo/learning_curve.csv",
                          "sweep.csv", "sweep.json", "stability.csv", "stability.json"}) {
        CAPTURE(f);
        CHECK(fs::exists(out / f));
    }

    const auto report = nlohmann::json::parse(dpo::io::read_file(out / "report.json"));
    CHECK(report["command"] == "backtest");
    CHECK(report["config"]["seed"] == 7);
    CHECK(report["interpretation"].is_array());
    for (std::string s : {"market", "ar1", "dpo"}) {
        CAPTURE(s);
        const auto& m = report["strategies"][s];
        for (const char* k : {"CW", "AR", "AVOL", "ASR", "MDD", "CR", "DDR"}) CHECK(m.contains(k));
    }
    CHECK(dpo::io::read_file(out / "sweep.csv").find("C,ASR,AR,AVOL,DDR,CR,MDD\n") == 0);

    // The report command reads the backtest back from disk.
    const auto rep = run_cli(base + "--set report.input=" + out.string() + " report", dir);
    CHECK(rep.code == 0);
    const auto longm = dpo::io::read_file(out / "metrics_long.csv");
    CHECK(longm.find("strategy,metric,value\n") == 0);
    CHECK(longm.find("dpo,ASR,") != std::string::npos);
    CHECK(dpo::io::read_file(out / "wealth_long.csv").find("strategy,date,R,CW\n") == 0);

    // Same config and seed, byte-identical outputs.
    const auto again = dir / "again";
    const std::string base2 = "--config " + cfg.string() + " --out " + again.string() + " ";
    CHECK(run_cli(base2 + "backtest", dir).code == 0);
    CHECK(run_cli(base2 + "train", dir).code == 0);
    for (std::string f : {"report.json", "dpo/weights.csv", "dpo/returns.csv", "checkpoint.json", "forecasts.csv"}) {
        CAPTURE(f);
        CHECK(dpo::io::read_file(out / f) == dpo::io::read_file(again / f));
    }
    // A different seed changes the market.
    const auto other = dir / "other";
    CHECK(run_cli("--config " + cfg.string() + " --out " + other.string() + " --seed 8 simulate", dir).code == 0);
    CHECK(dpo::io::read_file(out / "prices.csv") != dpo::io::read_file(other / "prices.csv"));
}

TEST_CASE("file data source") {
    const auto dir = testing::scratch("cli_file");
    const auto cfg = testing::write_text(dir / "c.toml", kSmallConfig);
    CHECK(run_cli("--config " + cfg.string() + " --out " + (dir / "sim").string() + " simulate", dir).code == 0);
    const std::string base = "--config " + cfg.string() + " --out " + (dir / "o").string() +
                             " --set data.source=file --set data.path=" + (dir / "sim" / "prices.csv").string() + " ";
    const auto r = run_cli(base + "sweep-c", dir);
    CHECK(r.code == 0);
    if (r.code != 0) MESSAGE(r.err);
    const auto missing = run_cli("--config " + cfg.string() + " --set data.source=file --set data.path=/nope.csv sweep-c", dir);
    CHECK(missing.code == 2);
    CHECK(missing.err.find("data.path") != std::string::npos);
}
