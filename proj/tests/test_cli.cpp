// End-to-end subprocess tests of the fngram command-line tool.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "fngram/corpus.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = FNGRAM_CLI_PATH;

struct RunResult {
  int exit_code;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string out_file = "cli_stdout.tmp";
  const int status = std::system((kCli + " " + args + " >" + out_file + " 2>&1").c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::path("cli_scratch") / std::to_string(reinterpret_cast<std::uintptr_t>(this));
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::remove("cli_stdout.tmp", ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

void make_vocab(const Scratch& s) {
  write_file(s.path("corpus.txt"), "ab cd\nef gh\nij kl\nmn op\n");
  const auto r = run("build-vocab --corpus " + s.path("corpus.txt") + " --out " +
                     s.path("vocab.txt") + " --mode char --max-size 64");
  REQUIRE(r.exit_code == 0);
}

std::string mini_config(int steps) {
  std::ostringstream os;
  os << "n_future=2\nalpha=1.0,0.5\nlayers_enc=1\nlayers_dec=1\nhidden=16\nffn=32\n"
     << "heads=2\nmax_len=32\nvocab_size=24\ndropout=0\nlr=0.003\nwarmup=5\n"
     << "batch_size=4\nsteps=" << steps << "\nseed=3\nlog_every=5\n";
  return os.str();
}

}  // namespace

TEST_CASE("build-vocab writes byte-identical files on reruns") {
  Scratch s;
  write_file(s.path("corpus.txt"), "hello world\nhello again\n");
  const std::string cmd = "build-vocab --corpus " + s.path("corpus.txt") + " --out " +
                          s.path("v1.txt") + " --mode char --max-size 32";
  REQUIRE(run(cmd).exit_code == 0);
  const auto first = slurp(s.path("v1.txt"));
  const std::string cmd2 = "build-vocab --corpus " + s.path("corpus.txt") + " --out " +
                           s.path("v2.txt") + " --mode char --max-size 32";
  REQUIRE(run(cmd2).exit_code == 0);
  CHECK(first == slurp(s.path("v2.txt")));
  CHECK(first.substr(0, 6) == "[PAD]\n");
}

TEST_CASE("prepare in dialog mode expands a 3-turn session into 2 records") {
  Scratch s;
  make_vocab(s);
  write_file(s.path("dialog.tsv"), "ab\tcd\tef\n");
  const auto r = run("prepare --corpus " + s.path("dialog.tsv") + " --vocab " +
                     s.path("vocab.txt") + " --out " + s.path("shard.bin") +
                     " --mode dialog --seed 1");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("records\t2") != std::string::npos);
  const auto records = fngram::read_shard(s.path("shard.bin"));
  REQUIRE(records.size() == 2);
  CHECK(records[1].decoder_ids.back() == fngram::kEosId);
}

TEST_CASE("prepare in span mode is reproducible and seed-sensitive") {
  Scratch s;
  make_vocab(s);
  const std::string base = "prepare --corpus " + s.path("corpus.txt") + " --vocab " +
                           s.path("vocab.txt") + " --mode span";
  REQUIRE(run(base + " --seed 5 --out " + s.path("a.bin")).exit_code == 0);
  REQUIRE(run(base + " --seed 5 --out " + s.path("b.bin")).exit_code == 0);
  REQUIRE(run(base + " --seed 6 --out " + s.path("c.bin")).exit_code == 0);
  CHECK(slurp(s.path("a.bin")) == slurp(s.path("b.bin")));
  CHECK(slurp(s.path("a.bin")) != slurp(s.path("c.bin")));
  const auto records = fngram::read_shard(s.path("a.bin"));
  CHECK(records.size() == 4);
  for (const auto& rec : records) CHECK(!rec.decoder_ids.empty());
}

TEST_CASE("pretrain logs step/loss lines, writes a checkpoint, and resumes") {
  Scratch s;
  make_vocab(s);
  write_file(s.path("mini.cfg"), mini_config(20));
  REQUIRE(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("shard.bin") + " --mode span --seed 2")
              .exit_code == 0);
  const auto r = run("pretrain --config " + s.path("mini.cfg") + " --shard " +
                     s.path("shard.bin") + " --out " + s.path("ck.bin"));
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("0\t") == 0);  // first log line is "0<TAB>loss"
  CHECK(r.out.find('\t') != std::string::npos);
  CHECK(fs::exists(s.path("ck.bin")));

  // Resume for ten more steps; the step counter continues from 20.
  const auto r2 = run("pretrain --resume " + s.path("ck.bin") + " --shard " +
                      s.path("shard.bin") + " --out " + s.path("ck2.bin") + " --steps 30");
  REQUIRE(r2.exit_code == 0);
  CHECK(r2.out.find("20\t") == 0);
  CHECK(fs::exists(s.path("ck2.bin")));
}

TEST_CASE("pretrain reruns write byte-identical checkpoints") {
  Scratch s;
  make_vocab(s);
  write_file(s.path("mini.cfg"), mini_config(12));
  REQUIRE(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("shard.bin") + " --mode span --seed 2")
              .exit_code == 0);
  const std::string base = "pretrain --config " + s.path("mini.cfg") + " --shard " +
                           s.path("shard.bin") + " --out ";
  REQUIRE(run(base + s.path("ck1.bin")).exit_code == 0);
  REQUIRE(run(base + s.path("ck2.bin")).exit_code == 0);
  CHECK(slurp(s.path("ck1.bin")) == slurp(s.path("ck2.bin")));
}

TEST_CASE("finetune starts from a checkpoint and trains on new pairs") {
  Scratch s;
  make_vocab(s);
  write_file(s.path("mini.cfg"), mini_config(15));
  REQUIRE(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("span.bin") + " --mode span --seed 2")
              .exit_code == 0);
  REQUIRE(run("pretrain --config " + s.path("mini.cfg") + " --shard " + s.path("span.bin") +
              " --out " + s.path("pre.bin"))
              .exit_code == 0);
  write_file(s.path("dialog.tsv"), "ab\tcd\nef\tgh\n");
  REQUIRE(run("prepare --corpus " + s.path("dialog.tsv") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("dlg.bin") + " --mode dialog --seed 3")
              .exit_code == 0);
  const auto r = run("finetune --config " + s.path("mini.cfg") + " --init " + s.path("pre.bin") +
                     " --shard " + s.path("dlg.bin") + " --out " + s.path("ft.bin") +
                     " --steps 10");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("0\t") == 0);  // finetuning restarts the step counter
  CHECK(fs::exists(s.path("ft.bin")));
}

TEST_CASE("generate emits one output line per input line; identity scoring gives BLEU 1") {
  Scratch s;
  make_vocab(s);
  write_file(s.path("mini.cfg"), mini_config(15));
  REQUIRE(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("shard.bin") + " --mode span --seed 2")
              .exit_code == 0);
  REQUIRE(run("pretrain --config " + s.path("mini.cfg") + " --shard " + s.path("shard.bin") +
              " --out " + s.path("ck.bin"))
              .exit_code == 0);
  write_file(s.path("inputs.txt"), "ab cd\nef gh\nij kl\n");
  const auto r = run("generate --ckpt " + s.path("ck.bin") + " --vocab " + s.path("vocab.txt") +
                     " --input " + s.path("inputs.txt") + " --output " + s.path("out.txt") +
                     " --beam 2 --max-out 8");
  REQUIRE(r.exit_code == 0);
  const auto out = slurp(s.path("out.txt"));
  CHECK(std::count(out.begin(), out.end(), '\n') == 3);

  const auto rescore = run("score --candidates " + s.path("out.txt") + " --references " +
                           s.path("out.txt") + " --vocab " + s.path("vocab.txt"));
  REQUIRE(rescore.exit_code == 0);
  CHECK(rescore.out.find("BLEU-4\t1.000000") != std::string::npos);
  CHECK(rescore.out.find("ROUGE-1\t1.000000") != std::string::npos);
  CHECK(rescore.out.find("# tokenizer: char") != std::string::npos);
}

TEST_CASE("score works with whitespace tokens and reports all metrics") {
  Scratch s;
  write_file(s.path("cand.txt"), "the cat sat\na b c\n");
  write_file(s.path("ref.txt"), "the cat ran\na b c d\n");
  const auto r = run("score --candidates " + s.path("cand.txt") + " --references " +
                     s.path("ref.txt") + " --out " + s.path("report.txt"));
  REQUIRE(r.exit_code == 0);
  const auto report = slurp(s.path("report.txt"));
  for (const std::string metric : {"ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-1", "BLEU-4",
                                   "BLEU-4-smoothed", "Distinct-1", "Distinct-2"})
    CHECK(report.find(metric + "\t") != std::string::npos);
}

TEST_CASE("usage errors exit 1; data errors exit 2") {
  Scratch s;
  CHECK(run("frobnicate").exit_code == 1);
  CHECK(run("build-vocab --no-such-flag 1").exit_code == 1);
  CHECK(run("build-vocab --out x --mode char --max-size 9").exit_code == 1);  // missing required
  CHECK(run("build-vocab --corpus does_not_exist.txt --out " + s.path("v.txt") +
            " --mode char --max-size 32")
            .exit_code == 2);
  make_vocab(s);
  CHECK(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
            " --out " + s.path("x.bin") + " --mode bogus")
            .exit_code == 2);
  write_file(s.path("short.tsv"), "only-one-turn\n");
  CHECK(run("prepare --corpus " + s.path("short.tsv") + " --vocab " + s.path("vocab.txt") +
            " --out " + s.path("y.bin") + " --mode dialog")
            .exit_code == 2);
}

TEST_CASE("subcommands write only to the paths given by flags") {
  Scratch s;
  make_vocab(s);
  std::set<std::string> before;
  for (const auto& e : fs::directory_iterator(s.dir)) before.insert(e.path().filename().string());
  REQUIRE(run("prepare --corpus " + s.path("corpus.txt") + " --vocab " + s.path("vocab.txt") +
              " --out " + s.path("only.bin") + " --mode span --seed 1")
              .exit_code == 0);
  std::set<std::string> after;
  for (const auto& e : fs::directory_iterator(s.dir)) after.insert(e.path().filename().string());
  before.insert("only.bin");
  CHECK(after == before);
}
