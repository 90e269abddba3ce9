#include "evo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "evo/rng.hpp"

namespace evo {

Vocabulary Vocabulary::byte_level() {
  Vocabulary v;
  v.kind = VocabKind::byte;
  v.validate();
  return v;
}

void Vocabulary::validate() const {
  int ids[4] = {pad_id, bos_id, eos_id, time_marker_id};
  for (int i = 0; i < 4; ++i) {
    if (ids[i] < 0 || ids[i] >= size())
      throw std::invalid_argument("Vocabulary: special id out of range");
    for (int j = i + 1; j < 4; ++j)
      if (ids[i] == ids[j]) throw std::invalid_argument("Vocabulary: special ids must be distinct");
  }
  if (kind == VocabKind::byte && !pieces.empty())
    throw std::invalid_argument("Vocabulary: byte kind carries no merged pieces");
}

std::string Vocabulary::piece(int id) const {
  if (id < 0 || id >= size()) throw std::domain_error("Vocabulary: id out of range");
  if (id < 256) return std::string(1, static_cast<char>(id));
  if (id < 260) return {};  // specials carry no bytes
  return pieces[static_cast<std::size_t>(id - 260)];
}

std::vector<int> Vocabulary::encode(std::string_view bytes) const {
  std::vector<int> ids;
  ids.reserve(bytes.size());
  for (unsigned char c : bytes) ids.push_back(static_cast<int>(c));
  if (kind == VocabKind::byte || merges.empty()) return ids;
  // apply merges greedily by rank
  std::map<std::pair<int, int>, int> rank;
  for (std::size_t r = 0; r < merges.size(); ++r) rank[merges[r]] = static_cast<int>(r);
  for (;;) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = rank.find({ids[i], ids[i + 1]});
      if (it != rank.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    // merge every occurrence of that pair
    std::pair<int, int> pair = merges[static_cast<std::size_t>(best_rank)];
    int merged = 260 + best_rank;
    std::vector<int> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(ids[i]);
        i += 1;
      }
    }
    ids = std::move(next);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) out += piece(id);
  return out;
}

Vocabulary Vocabulary::train_bpe(std::string_view corpus, int target_size) {
  if (target_size <= 260) throw std::invalid_argument("train_bpe: target_size must exceed 260");
  Vocabulary v;
  v.kind = VocabKind::learned_subword;
  std::vector<int> ids;
  ids.reserve(corpus.size());
  for (unsigned char c : corpus) ids.push_back(static_cast<int>(c));
  auto piece_of = [&](int id) { return v.piece(id); };
  while (v.size() < target_size) {
    std::map<std::pair<int, int>, long> counts;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) counts[{ids[i], ids[i + 1]}]++;
    if (counts.empty()) break;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    if (best->second < 2) break;
    std::pair<int, int> pair = best->first;
    int merged = v.size();
    v.pieces.push_back(piece_of(pair.first) + piece_of(pair.second));
    v.merges.push_back(pair);
    std::vector<int> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(ids[i]);
        i += 1;
      }
    }
    ids = std::move(next);
  }
  v.validate();
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SplitCorpus ingest(const std::vector<std::string>& paths, const Vocabulary& vocab,
                   const IngestOptions& opts) {
  if (opts.seq_len < 1) throw std::invalid_argument("ingest: seq_len must be >= 1");
  if (opts.train_fraction < 0.0 || opts.train_fraction > 1.0)
    throw std::invalid_argument("ingest: train_fraction must lie in [0,1]");
  std::vector<Window> windows;
  for (const auto& path : paths) {
    std::string bytes = read_file(path);
    std::vector<int> ids = vocab.encode(bytes);
    const long stride = opts.overlapping ? std::max(1, opts.seq_len / 2) : opts.seq_len;
    for (long at = 0; at < static_cast<long>(ids.size()); at += stride) {
      long end = std::min<long>(at + opts.seq_len, static_cast<long>(ids.size()));
      if (end - at < opts.min_window) break;
      Window w;
      w.ids.assign(ids.begin() + at, ids.begin() + end);
      w.source = path;
      w.offset = at;
      windows.push_back(std::move(w));
      if (end == static_cast<long>(ids.size())) break;
    }
  }
  // deterministic shuffle + fraction split
  Rng rng = Rng::stream(opts.seed, 0x16e5u);
  for (std::size_t i = windows.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(windows[i - 1], windows[j]);
  }
  std::size_t n_train = static_cast<std::size_t>(opts.train_fraction * windows.size());
  SplitCorpus out;
  out.train.windows.assign(windows.begin(), windows.begin() + n_train);
  out.val.windows.assign(windows.begin() + n_train, windows.end());
  return out;
}

Batch make_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, int pad_id) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no indices");
  Index max_len = 0;
  for (auto i : indices)
    max_len = std::max<Index>(max_len, static_cast<Index>(corpus.windows.at(i).ids.size()));
  Batch b;
  b.ids = MatXi::Constant(static_cast<Index>(indices.size()), max_len, pad_id);
  b.lengths.resize(static_cast<Index>(indices.size()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& w = corpus.windows.at(indices[r]);
    b.lengths[static_cast<Index>(r)] = static_cast<int>(w.ids.size());
    for (std::size_t c = 0; c < w.ids.size(); ++c)
      b.ids(static_cast<Index>(r), static_cast<Index>(c)) = w.ids[c];
    b.offsets.push_back(w.offset);
  }
  return b;
}

double unigram_byte_entropy_bits(std::string_view bytes) {
  if (bytes.empty()) return 0.0;
  std::vector<long> counts(256, 0);
  for (unsigned char c : bytes) counts[c]++;
  double h = 0.0;
  double n = static_cast<double>(bytes.size());
  for (long c : counts) {
    if (c == 0) continue;
    double p = c / n;
    h -= p * std::log2(p);
  }
  return h;
}

std::string make_memorization_corpus(std::uint64_t seed, int sequences, int length) {
  Rng rng = Rng::stream(seed, 0x3e30u);
  std::string out;
  out.reserve(static_cast<std::size_t>(sequences) * length);
  for (int s = 0; s < sequences; ++s)
    for (int i = 0; i < length; ++i)
      out.push_back(static_cast<char>(rng.below(256)));
  return out;
}

namespace {

const char* kNouns[] = {"river",  "lantern", "castle", "meadow", "engine", "harbor", "forest",
                        "letter", "garden",  "bridge", "mirror", "stone",  "signal", "valley",
                        "market", "vessel",  "orchard", "tower", "shadow", "compass"};
const char* kAdjectives[] = {"quiet", "silver", "ancient", "bright", "narrow", "gentle",
                             "hollow", "crimson", "distant", "steady", "golden", "frozen"};
const char* kVerbs[] = {"guards", "crosses", "follows", "carries", "watches", "reaches",
                        "circles", "shelters", "answers", "remembers"};
const char* kAdverbs[] = {"slowly", "quietly", "always", "rarely", "brightly", "carefully"};

}  // namespace

std::string make_text_corpus(std::uint64_t seed, std::size_t min_bytes) {
  Rng rng = Rng::stream(seed, 0x7e27u);
  auto pick = [&](auto& list) {
    return list[rng.below(sizeof(list) / sizeof(list[0]))];
  };
  std::string out;
  out.reserve(min_bytes + 128);
  while (out.size() < min_bytes) {
    std::string s = "the ";
    s += pick(kAdjectives);
    s += ' ';
    s += pick(kNouns);
    s += ' ';
    s += pick(kVerbs);
    s += " the ";
    s += pick(kAdjectives);
    s += ' ';
    s += pick(kNouns);
    if (rng.uniform() < 0.5) {
      s += ' ';
      s += pick(kAdverbs);
    }
    s += ".\n";
    out += s;
  }
  return out;
}

std::string make_arithmetic_corpus(std::uint64_t seed, int lines) {
  Rng rng = Rng::stream(seed, 0xa217u);
  std::string out;
  for (int i = 0; i < lines; ++i) {
    int a = static_cast<int>(rng.below(100));
    int b = static_cast<int>(rng.below(100));
    out += std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(a + b) + "\n";
  }
  return out;
}

}  // namespace evo
