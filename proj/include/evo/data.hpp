#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evo/types.hpp"

namespace evo {

enum class VocabKind { byte, learned_subword };

// Byte-level vocabulary (ids 0..255 are raw bytes) with four special ids
// appended, optionally extended by learned BPE merges. Encode/decode
// round-trips arbitrary byte sequences exactly for both kinds.
struct Vocabulary {
  VocabKind kind = VocabKind::byte;
  int pad_id = 256;
  int bos_id = 257;
  int eos_id = 258;
  int time_marker_id = 259;  // reserved progression-time conditioning token
  // piece table for merged ids (>= 260); pieces[i] is the byte string of
  // id 260 + i
  std::vector<std::string> pieces;
  // merge list in rank order: (left id, right id) -> 260 + rank
  std::vector<std::pair<int, int>> merges;

  int size() const { return 260 + static_cast<int>(pieces.size()); }

  static Vocabulary byte_level();
  // Learns `target_size - 260` merges from the corpus (byte-level BPE).
  static Vocabulary train_bpe(std::string_view corpus, int target_size);

  std::vector<int> encode(std::string_view bytes) const;
  std::string decode(const std::vector<int>& ids) const;
  std::string piece(int id) const;  // byte string of a single id

  void validate() const;
};

// A tokenized window with provenance.
struct Window {
  std::vector<int> ids;
  std::string source;
  long offset = 0;
};

struct Corpus {
  std::vector<Window> windows;

  long total_tokens() const {
    long n = 0;
    for (const auto& w : windows) n += static_cast<long>(w.ids.size());
    return n;
  }
};

// Spec'd batch shape: padded id matrix with per-row valid lengths and
// source offsets.
struct Batch {
  MatXi ids;                  // B x L, padded with pad_id
  VecXi lengths;              // valid tokens per row
  std::vector<long> offsets;  // provenance

  std::vector<std::vector<int>> sequences() const {
    std::vector<std::vector<int>> out(ids.rows());
    for (Index b = 0; b < ids.rows(); ++b) {
      out[b].assign(ids.row(b).data(), ids.row(b).data() + lengths[b]);
      for (int i = 0; i < lengths[b]; ++i) out[b][static_cast<std::size_t>(i)] = ids(b, i);
    }
    return out;
  }
};

struct IngestOptions {
  int seq_len = 256;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  bool overlapping = false;  // off: windows partition each document
  int min_window = 2;
};

struct SplitCorpus {
  Corpus train;
  Corpus val;
};

// Reads the files, tokenizes, windows each document, shuffles windows
// deterministically and splits by fraction.
SplitCorpus ingest(const std::vector<std::string>& paths, const Vocabulary& vocab,
                   const IngestOptions& opts);

Batch make_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, int pad_id);

// Unigram byte entropy of a corpus file in bits per byte (the baseline
// the real-text training criterion is measured against).
double unigram_byte_entropy_bits(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// Desk-scale corpora ------------------------------------------------------

// 32 random 64-byte sequences (memorization set).
std::string make_memorization_corpus(std::uint64_t seed, int sequences = 32, int length = 64);

// Synthetic English-like text from a small template grammar; sized to at
// least `min_bytes`.
std::string make_text_corpus(std::uint64_t seed, std::size_t min_bytes);

// Lines of the form "12+7=19".
std::string make_arithmetic_corpus(std::uint64_t seed, int lines);

}  // namespace evo
