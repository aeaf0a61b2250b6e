#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include <json.hpp>

#include "dfd/io.hpp"
#include "dfd/metrics.hpp"
#include "dfd/optics.hpp"

namespace fs = std::filesystem;
using namespace dfd;

namespace {

const fs::path kWork = fs::temp_directory_path() / "dfd_cli_tests";

const char* kSmall = R"({"scene": {"rows": 20, "cols": 20, "count": 2},
  "sampler": {"steps": 12, "snapshot_stride": 6},
  "prior": {"kind": "gaussian"},
  "train": {"steps": 12, "patch": 8, "crops_per_scene": 2, "width": 4, "time_features": 4}})";

int dfd_run(const std::string& args) {
  const std::string cmd = "cd '" + kWork.string() + "' && '" DFD_CLI_PATH "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string bytes = slurp(e.path());
    if (e.path().filename() == "manifest.json") {
      auto j = nlohmann::json::parse(bytes);
      REQUIRE(j.contains("volatile"));
      j.erase("volatile");
      bytes = j.dump();
    }
    files[fs::relative(e.path(), dir).string()] = bytes;
  }
  return files;
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    spit(kWork / "small.json", kSmall);
  }
};

}  // namespace

TEST_CASE("cli: noiseless truth evaluates to infinite PSNR and zero depth error") {
  Workspace ws;
  REQUIRE(dfd_run("simulate --config small.json --sigma 0 --out sim") == 0);
  REQUIRE(dfd_run("eval --truth sim sim --out ev") == 0);
  std::ifstream is(kWork / "ev" / "eval.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "scene,method,sigma,seed,depth_mae,psnr");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    CHECK(line.find(",truth,0,") != std::string::npos);
    CHECK(line.substr(line.size() - 6) == ",0,inf");
  }
  CHECK(rows == 2);
}

TEST_CASE("cli: tau = 0 reproduces the prior-only sampler bit for bit") {
  Workspace ws;
  REQUIRE(dfd_run("simulate --config small.json --out sim") == 0);
  REQUIRE(dfd_run("reconstruct --config small.json --input sim --method dfd_dps --tau 0 --out a") == 0);
  REQUIRE(dfd_run("reconstruct --config small.json --input sim --method ddpm_prior_only --out b") == 0);
  REQUIRE(dfd_run("reconstruct --config small.json --input sim --method dfd_dps --tau 2 --out c") == 0);
  for (const char* s : {"scene_000", "scene_001"}) {
    const std::string a = slurp(kWork / "a" / s / "recon.map");
    CHECK(!a.empty());
    CHECK(a == slurp(kWork / "b" / s / "recon.map"));
    CHECK(a != slurp(kWork / "c" / s / "recon.map"));
  }
}

TEST_CASE("cli: reruns are byte identical apart from the manifest timestamp") {
  Workspace ws;
  const std::string pipeline =
      "simulate --config small.json --seed 5 --out sim && '" DFD_CLI_PATH
      "' reconstruct --config small.json --seed 5 --input sim --out rec && '" DFD_CLI_PATH
      "' reconstruct --config small.json --input sim --method baseline --out base && '" DFD_CLI_PATH
      "' eval --truth sim rec base --out ev";
  REQUIRE(dfd_run(pipeline) == 0);
  const auto first = snapshot(kWork);
  REQUIRE(dfd_run(pipeline) == 0);
  const auto second = snapshot(kWork);
  REQUIRE(first.size() == second.size());
  for (const auto& [name, bytes] : first) {
    INFO(name);
    CHECK(second.at(name) == bytes);
  }
  CHECK(first.count("rec/scene_000/fidelity.png"));
  CHECK(first.count("rec/scene_000/comparison.png"));
  CHECK(first.count("base/scene_001/confidence.png"));
  CHECK(first.count("ev/paired.csv"));
}

TEST_CASE("cli: exit codes") {
  Workspace ws;
  spit(kWork / "unknown.json", R"({"sampler": {"stpes": 10}})");
  spit(kWork / "type.json", R"({"sigma": "high"})");
  spit(kWork / "range.json", R"({"scene": {"d_min": 1.0}})");
  spit(kWork / "broken.json", "{");
  CHECK(dfd_run("simulate --config unknown.json --out x") == 2);
  CHECK(dfd_run("simulate --config type.json --out x") == 2);
  CHECK(dfd_run("simulate --config range.json --out x") == 2);
  CHECK(dfd_run("simulate --sigma -1 --out x") == 2);
  CHECK(dfd_run("reconstruct --method nope --input x --out y") == 2);
  CHECK(dfd_run("simulate --config broken.json --out x") == 5);
  CHECK(dfd_run("reconstruct --input missing --out y") == 5);
  CHECK(dfd_run("frobnicate") == 2);
  CHECK(dfd_run("reconstruct --config small.json --input missing --prior x --out y") == 2);
  REQUIRE(dfd_run("simulate --config small.json --out sim") == 0);
  spit(kWork / "ckpt.json", R"({"prior": {"kind": "checkpoint"}})");
  CHECK(dfd_run("reconstruct --config ckpt.json --input sim --out y") == 2);
  CHECK(dfd_run("--help") == 0);
}

TEST_CASE("cli: psf inspect, unit rescale and calibration round trip") {
  Workspace ws;
  REQUIRE(dfd_run("simulate --config small.json --out sim") == 0);
  REQUIRE(dfd_run("psf rescale --psf sim/psf.bin --scale 1 --out r") == 0);
  CHECK(slurp(kWork / "r" / "psf_rescaled.bin") == slurp(kWork / "sim" / "psf.bin"));
  REQUIRE(std::system(("cd '" + kWork.string() + "' && '" DFD_CLI_PATH "' psf inspect > inspect.txt").c_str()) == 0);
  const std::string report = slurp(kWork / "inspect.txt");
  CHECK(report.find("R sum 1.000000 support 9x9") != std::string::npos);
  CHECK(report.find("B sum 1.000000 support 9x9") != std::string::npos);

  const CodedPsf truth = synthetic_coded_psf(9);
  double peak = 0.0;
  for (const auto& k : truth.kernels) peak = std::max(peak, k.maxCoeff());
  Rgb pin = Rgb::Zero(32, 40), bg = Rgb::Constant(32, 40, 0.05);
  for (int c = 0; c < 3; ++c) {
    pin[c].setConstant(0.05);
    pin[c].block(11, 17, 9, 9) += 0.9 * truth.kernels[c] / peak;
  }
  write_png(kWork / "pinhole.png", pin, 16);
  write_png(kWork / "background.png", bg, 16);
  REQUIRE(dfd_run("psf calibrate --pinhole pinhole.png --background background.png --out cal") == 0);
  const CodedPsf got = read_psf(kWork / "cal" / "psf_calibrated.bin");
  REQUIRE(got.size() == 9);
  for (int c = 0; c < 3; ++c) CHECK((got.kernels[c] - truth.kernels[c]).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(fs::exists(kWork / "cal" / "psf_preview.png"));

  write_png(kWork / "flat.png", bg, 16);
  CHECK(dfd_run("psf calibrate --pinhole flat.png --background background.png --out cal2") == 4);
}

TEST_CASE("cli: resumed training matches an uninterrupted run") {
  Workspace ws;
  REQUIRE(dfd_run("train-prior --config small.json --steps 12 --out full") == 0);
  REQUIRE(dfd_run("train-prior --config small.json --steps 5 --out half") == 0);
  spit(kWork / "resume.json", R"({"scene": {"rows": 20, "cols": 20, "count": 2},
    "train": {"steps": 12, "patch": 8, "crops_per_scene": 2, "width": 4, "time_features": 4,
              "resume": "half/prior.ckpt"}})");
  REQUIRE(dfd_run("train-prior --config resume.json --out resumed") == 0);
  CHECK(slurp(kWork / "resumed" / "prior.ckpt") == slurp(kWork / "full" / "prior.ckpt"));
  CHECK(slurp(kWork / "resumed" / "loss.csv") == slurp(kWork / "full" / "loss.csv"));

  spit(kWork / "use.json", R"({"scene": {"rows": 20, "cols": 20, "count": 1}, "sampler": {"steps": 8},
    "prior": {"kind": "checkpoint", "checkpoint": "full/prior.ckpt"}})");
  REQUIRE(dfd_run("simulate --config use.json --out sim") == 0);
  CHECK(dfd_run("reconstruct --config use.json --input sim --out rec") == 0);
  CHECK(dfd_run("reconstruct --config use.json --input sim --method dps --out rec_dps") == 0);
  CHECK(fs::exists(kWork / "rec" / "scene_000" / "trajectory.csv"));
}
