// Command-line frontend: build-vocab, prepare, pretrain, finetune, generate,
// score. Exit codes: 0 success, 1 usage error, 2 data/contract error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fngram/fngram.hpp"

namespace {

using namespace fngram;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

Vocabulary::Mode parse_vocab_mode(const std::string& mode) {
  if (mode == "char") return Vocabulary::Mode::kChar;
  if (mode == "subword") return Vocabulary::Mode::kSubword;
  throw ContractError("unknown vocabulary mode \"" + mode + "\" (expected char or subword)");
}

void check_ids_in_vocab(const std::vector<ShardRecord>& records, int vocab_size,
                        const std::string& path) {
  for (const auto& rec : records) {
    for (const int id : rec.encoder_ids)
      if (id < 0 || id >= vocab_size)
        throw IoError("shard " + path + ": id " + std::to_string(id) +
                      " outside vocab_size " + std::to_string(vocab_size));
    for (const int id : rec.decoder_ids)
      if (id < 0 || id >= vocab_size)
        throw IoError("shard " + path + ": id " + std::to_string(id) +
                      " outside vocab_size " + std::to_string(vocab_size));
  }
}

/// Encoder-side encoding of one input line; tab-separated turns join via [X_SEP].
std::vector<int> encode_source_line(const Vocabulary& vocab, const std::string& line) {
  const DialogSession session = parse_session_line(line);
  std::vector<int> ids;
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    if (i > 0) ids.push_back(kXSepId);
    const auto turn = vocab.encode(session.turns[i]);
    ids.insert(ids.end(), turn.begin(), turn.end());
  }
  return ids;
}

std::string describe_architecture_mismatch(const ModelConfig& a, const ModelConfig& b) {
  std::ostringstream os;
  const auto cmp = [&](const char* key, auto x, auto y) {
    if (x != y) os << ' ' << key << " (" << x << " vs " << y << ")";
  };
  cmp("n_future", a.n_future, b.n_future);
  cmp("layers_enc", a.layers_enc, b.layers_enc);
  cmp("layers_dec", a.layers_dec, b.layers_dec);
  cmp("hidden", a.hidden, b.hidden);
  cmp("ffn", a.ffn, b.ffn);
  cmp("heads", a.heads, b.heads);
  cmp("max_len", a.max_len, b.max_len);
  cmp("vocab_size", a.vocab_size, b.vocab_size);
  return os.str();
}

std::string rng_state_string(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::ostringstream os;
  os << rng;
  return os.str();
}

int cmd_build_vocab(const std::string& corpus, const std::string& out, const std::string& mode,
                    std::size_t max_size) {
  std::ifstream in(corpus, std::ios::binary);
  if (!in) throw IoError("cannot open " + corpus);
  const Vocabulary vocab = Vocabulary::build(in, parse_vocab_mode(mode), max_size);
  vocab.save(out);
  std::cout << "vocab\t" << vocab.size() << '\n';
  return 0;
}

int cmd_prepare(const std::string& corpus, const std::string& vocab_path,
                const std::string& out, const std::string& mode, std::uint64_t seed,
                std::size_t max_len) {
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  const auto lines = read_lines(corpus);
  std::vector<ShardRecord> records;
  if (mode == "span") {
    std::size_t doc = 0;
    for (const auto& line : lines) {
      if (line.empty()) continue;
      auto ids = truncate_ids(vocab.encode(line), max_len, TruncateSide::kRight);
      if (ids.empty()) continue;
      const auto ex = mask_spans(ids, mix_seed(seed, doc));
      records.push_back({ex.encoder_ids, ex.decoder_target_ids});
      ++doc;
    }
  } else if (mode == "dialog") {
    for (const auto& line : lines) {
      if (line.empty()) continue;
      for (auto& [enc, dec] : expand_dialog(parse_session_line(line), vocab)) {
        enc = truncate_ids(std::move(enc), max_len, TruncateSide::kLeft);
        if (dec.size() > max_len) {  // keep the response head but preserve [EOS]
          dec.resize(max_len - 1);
          dec.push_back(kEosId);
        }
        records.push_back({std::move(enc), std::move(dec)});
      }
    }
  } else {
    throw ContractError("unknown prepare mode \"" + mode + "\" (expected span or dialog)");
  }
  write_shard(out, records);
  std::cout << "records\t" << records.size() << '\n';
  return 0;
}

struct TrainOverrides {
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> log_every;

  void apply(TrainConfig& cfg) const {
    if (lr) cfg.lr = *lr;
    if (batch_size) cfg.batch_size = *batch_size;
    if (steps) cfg.steps = *steps;
    if (seed) cfg.seed = *seed;
    if (log_every) cfg.log_every = *log_every;
  }
};

int cmd_train(const std::string& config_path, const std::string& shard_path,
              const std::string& out, const std::string& resume_path,
              const std::string& init_path, const TrainOverrides& overrides) {
  TrainConfig cfg;
  Parameters<float> params;
  AdamState<float> adam;
  std::int64_t start_step = 0;

  if (!resume_path.empty()) {
    auto ck = load_checkpoint<float>(resume_path);
    cfg = config_path.empty() ? ck.cfg : load_train_config(config_path);
    if (!config_path.empty()) {
      const auto mismatch = describe_architecture_mismatch(ck.cfg.model, cfg.model);
      if (!mismatch.empty())
        throw ContractError("resume: config does not match checkpoint:" + mismatch);
    }
    params = std::move(ck.params);
    adam = std::move(ck.adam);
    start_step = ck.step;
  } else if (!init_path.empty()) {
    auto ck = load_checkpoint<float>(init_path);
    cfg = load_train_config(config_path);
    const auto mismatch = describe_architecture_mismatch(ck.cfg.model, cfg.model);
    if (!mismatch.empty())
      throw ContractError("finetune: config does not match checkpoint:" + mismatch);
    params = std::move(ck.params);
    adam = AdamState<float>::init(params);  // fresh optimizer for the new task
  } else {
    cfg = load_train_config(config_path);
    cfg.model.validate();
    params = Parameters<float>::init(cfg.model, cfg.seed);
    adam = AdamState<float>::init(params);
  }
  overrides.apply(cfg);
  cfg.model.validate();

  const auto data = read_shard(shard_path);
  if (data.empty()) throw IoError("shard " + shard_path + " is empty");
  check_ids_in_vocab(data, cfg.model.vocab_size, shard_path);

  train_loop(params, adam, cfg, data, start_step, &std::cout);
  save_checkpoint(out, params, adam, cfg, cfg.steps, rng_state_string(cfg.seed));
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& vocab_path,
                 const std::string& input_path, const std::string& output_path, int beam,
                 int max_out, double length_norm) {
  if (beam < 1) throw ContractError("generate: --beam must be >= 1");
  const auto ck = load_checkpoint<float>(ckpt_path);
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (static_cast<int>(vocab.size()) != ck.cfg.model.vocab_size)
    throw ContractError("generate: vocabulary size " + std::to_string(vocab.size()) +
                        " does not match checkpoint vocab_size " +
                        std::to_string(ck.cfg.model.vocab_size));
  max_out = std::min(max_out, ck.cfg.model.max_len);

  const auto lines = read_lines(input_path);
  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + output_path);
  for (const auto& line : lines) {
    if (line.empty()) {
      out << '\n';
      continue;
    }
    auto ids = truncate_ids(encode_source_line(vocab, line),
                            static_cast<std::size_t>(ck.cfg.model.max_len),
                            TruncateSide::kLeft);
    std::vector<int> generated;
    if (beam == 1) {
      generated = greedy_generate(ck.params, ck.cfg.model, ids, max_out);
    } else {
      const auto hyps = beam_generate(ck.params, ck.cfg.model, ids, beam, max_out, length_norm);
      if (!hyps.empty()) generated = hyps.front().ids;
    }
    out << vocab.decode(generated, /*strip_specials=*/true) << '\n';
  }
  if (!out) throw IoError("write failed for " + output_path);
  return 0;
}

int cmd_score(const std::string& cand_path, const std::string& ref_path,
              const std::string& vocab_path, const std::string& out_path, int max_n) {
  const auto cand_lines = read_lines(cand_path);
  const auto ref_lines = read_lines(ref_path);
  if (cand_lines.size() != ref_lines.size())
    throw ContractError("score: " + std::to_string(cand_lines.size()) + " candidate lines vs " +
                        std::to_string(ref_lines.size()) + " reference lines");

  std::string tokenizer_desc = "whitespace";
  std::vector<std::vector<int>> cand_ids, ref_ids;
  std::vector<std::vector<std::string>> cand_words, ref_words;
  const bool use_vocab = !vocab_path.empty();
  if (use_vocab) {
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    tokenizer_desc = vocab.mode() == Vocabulary::Mode::kChar ? "char" : "subword";
    for (const auto& l : cand_lines) cand_ids.push_back(vocab.encode(l));
    for (const auto& l : ref_lines) ref_ids.push_back(vocab.encode(l));
  } else {
    const auto split = [](const std::string& l) {
      std::vector<std::string> words;
      std::istringstream ss(l);
      std::string w;
      while (ss >> w) words.push_back(w);
      return words;
    };
    for (const auto& l : cand_lines) cand_words.push_back(split(l));
    for (const auto& l : ref_lines) ref_words.push_back(split(l));
  }

  const auto mean_over_pairs = [&](auto&& fn) {
    double total = 0.0;
    const std::size_t n = cand_lines.size();
    for (std::size_t i = 0; i < n; ++i)
      total += use_vocab ? fn(cand_ids[i], ref_ids[i]) : fn(cand_words[i], ref_words[i]);
    return n ? total / static_cast<double>(n) : 0.0;
  };

  std::vector<std::pair<std::string, double>> rows;
  for (const int n : {1, 2})
    rows.emplace_back("ROUGE-" + std::to_string(n),
                      mean_over_pairs([n](const auto& c, const auto& r) {
                        return rouge_n(c, r, n).value;
                      }));
  rows.emplace_back("ROUGE-L", mean_over_pairs([](const auto& c, const auto& r) {
    return rouge_l(c, r).value;
  }));
  for (int n = 1; n <= max_n; ++n) {
    const double v = use_vocab ? bleu(cand_ids, ref_ids, n, false).value
                               : bleu(cand_words, ref_words, n, false).value;
    rows.emplace_back("BLEU-" + std::to_string(n), v);
  }
  rows.emplace_back("BLEU-" + std::to_string(max_n) + "-smoothed",
                    use_vocab ? bleu(cand_ids, ref_ids, max_n, true).value
                              : bleu(cand_words, ref_words, max_n, true).value);
  for (const int n : {1, 2})
    rows.emplace_back("Distinct-" + std::to_string(n),
                      use_vocab ? distinct_n(cand_ids, n).value
                                : distinct_n(cand_words, n).value);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    if (!file) throw IoError("cannot write " + out_path);
    out = &file;
  }
  (*out) << "# tokenizer: " << tokenizer_desc << '\n';
  write_score_report(*out, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Future n-gram sequence-to-sequence toolkit"};
  app.require_subcommand(1);

  std::string corpus, vocab_path, out_path, mode, config_path, shard_path, ckpt_path;
  std::string input_path, output_path, resume_path, init_path, cand_path, ref_path;
  std::size_t max_size = 0, max_len = 512;
  std::uint64_t seed = 0;
  int beam = 4, max_out = 128, max_n = 4;
  double length_norm = 1.0;
  TrainOverrides overrides;

  auto* build = app.add_subcommand("build-vocab", "Build a vocabulary file from a corpus");
  build->add_option("--corpus", corpus, "corpus file (char mode) or token inventory (subword)")
      ->required();
  build->add_option("--out", out_path, "vocabulary file to write")->required();
  build->add_option("--mode", mode, "char|subword")->default_val("char");
  build->add_option("--max-size", max_size, "maximum vocabulary size incl. specials")
      ->required();

  auto* prepare = app.add_subcommand("prepare", "Turn a corpus into a training shard");
  prepare->add_option("--corpus", corpus, "one document (span) or session (dialog) per line")
      ->required();
  prepare->add_option("--vocab", vocab_path, "vocabulary file")->required();
  prepare->add_option("--out", out_path, "shard file to write")->required();
  prepare->add_option("--mode", mode, "span|dialog")->required();
  prepare->add_option("--seed", seed, "masking seed")->default_val(0);
  prepare->add_option("--max-len", max_len, "maximum sequence length")->default_val(512);

  const auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--shard", shard_path, "training shard")->required();
    cmd->add_option("--out", out_path, "checkpoint file to write")->required();
    cmd->add_option_function<double>("--lr", [&](double v) { overrides.lr = v; },
                                     "override learning rate");
    cmd->add_option_function<int>("--batch-size", [&](int v) { overrides.batch_size = v; },
                                  "override batch size");
    cmd->add_option_function<std::int64_t>("--steps", [&](std::int64_t v) { overrides.steps = v; },
                                           "override step count");
    cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { overrides.seed = v; },
                                            "override training seed");
    cmd->add_option_function<int>("--log-every", [&](int v) { overrides.log_every = v; },
                                  "override logging interval");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Train from scratch (or resume)");
  pretrain->add_option("--config", config_path, "key=value training config");
  pretrain->add_option("--resume", resume_path, "checkpoint to continue from");
  add_train_flags(pretrain);

  auto* finetune = app.add_subcommand("finetune", "Continue from a pre-trained checkpoint");
  finetune->add_option("--config", config_path, "key=value training config")->required();
  finetune->add_option("--init", init_path, "checkpoint holding initial parameters")->required();
  add_train_flags(finetune);

  auto* generate = app.add_subcommand("generate", "Decode one output line per input line");
  generate->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
  generate->add_option("--vocab", vocab_path, "vocabulary file")->required();
  generate->add_option("--input", input_path, "source file, one input per line")->required();
  generate->add_option("--output", output_path, "file to write outputs to")->required();
  generate->add_option("--beam", beam, "beam width (1 = greedy)")->default_val(4);
  generate->add_option("--max-out", max_out, "maximum generated tokens")->default_val(128);
  generate->add_option("--length-norm", length_norm, "length normalization exponent")
      ->default_val(1.0);

  auto* score = app.add_subcommand("score", "Score candidates against references");
  score->add_option("--candidates", cand_path, "candidate file")->required();
  score->add_option("--references", ref_path, "reference file")->required();
  score->add_option("--vocab", vocab_path, "tokenize with this vocabulary (default whitespace)");
  score->add_option("--out", out_path, "report file (default stdout)");
  score->add_option("--max-n", max_n, "highest BLEU order")->default_val(4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (build->parsed()) return cmd_build_vocab(corpus, out_path, mode, max_size);
    if (prepare->parsed()) return cmd_prepare(corpus, vocab_path, out_path, mode, seed, max_len);
    if (pretrain->parsed()) {
      if (config_path.empty() && resume_path.empty())
        throw ContractError("pretrain: either --config or --resume is required");
      return cmd_train(config_path, shard_path, out_path, resume_path, "", overrides);
    }
    if (finetune->parsed())
      return cmd_train(config_path, shard_path, out_path, "", init_path, overrides);
    if (generate->parsed())
      return cmd_generate(ckpt_path, vocab_path, input_path, output_path, beam, max_out,
                          length_norm);
    if (score->parsed()) return cmd_score(cand_path, ref_path, vocab_path, out_path, max_n);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
