#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dispo {

// Token alphabet. Ids are 0..V-1, bijective with the symbol string.
// 'E' terminates generation, 'A' delimits the answer; no padding token.
class Vocab {
 public:
  explicit Vocab(std::string symbols) : symbols_(std::move(symbols)) {
    if (symbols_.size() < 14 || symbols_.size() > 64)
      throw std::invalid_argument("vocab size must be in [14, 64]");
    ids_.fill(-1);
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const unsigned char c = static_cast<unsigned char>(symbols_[i]);
      if (ids_[c] != -1) throw std::invalid_argument("duplicate vocab symbol");
      ids_[c] = static_cast<int>(i);
    }
    if (ids_[static_cast<unsigned char>('E')] < 0)
      throw std::invalid_argument("vocab must contain end-of-sequence 'E'");
  }

  /// Digits 0-9, operators '+','*','=', answer delimiter 'A', eos 'E'.
  static Vocab arithmetic() { return Vocab("0123456789+*=AE"); }

  int size() const { return static_cast<int>(symbols_.size()); }
  char symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  int id(char c) const {
    const int v = ids_[static_cast<unsigned char>(c)];
    if (v < 0) throw std::invalid_argument(std::string("symbol not in vocab: ") + c);
    return v;
  }

  int eos() const { return id('E'); }
  int answer_delim() const { return id('A'); }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(id(c));
    return out;
  }

  std::string decode(std::span<const int> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(symbol(t));
    return out;
  }

 private:
  std::string symbols_;
  std::array<int, 256> ids_{};
};

}  // namespace dispo
