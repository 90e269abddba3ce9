// Generates the desk-scale corpora: the 32x64 memorization set, a
// synthetic English-like text corpus, and an arithmetic corpus.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "evo/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"make_corpus: generate desk-scale training corpora"};
  std::string kind = "memorization", out;
  std::uint64_t seed = 0;
  std::size_t bytes = 1 << 20;
  int lines = 20000;
  app.add_option("--kind", kind, "memorization | text | arithmetic")->required();
  app.add_option("--out", out, "output file")->required();
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--bytes", bytes, "minimum size (text kind)");
  app.add_option("--lines", lines, "line count (arithmetic kind)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::string data;
    if (kind == "memorization")
      data = evo::make_memorization_corpus(seed);
    else if (kind == "text")
      data = evo::make_text_corpus(seed, bytes);
    else if (kind == "arithmetic")
      data = evo::make_arithmetic_corpus(seed, lines);
    else
      throw std::invalid_argument("unknown corpus kind: " + kind);
    evo::write_file(out, data);
    std::cerr << "wrote " << data.size() << " bytes to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
