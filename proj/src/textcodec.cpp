#include "hidegate/textcodec.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "hidegate/error.hpp"
#include "utf8.hpp"

namespace hidegate {

namespace byte_map {
namespace {

struct Tables {
  std::array<char32_t, 256> forward{};
  std::unordered_map<char32_t, std::uint8_t> backward;

  Tables() {
    std::array<bool, 256> direct{};
    auto mark = [&](int lo, int hi) {
      for (int b = lo; b <= hi; ++b) direct[b] = true;
    };
    mark('!', '~');
    mark(0xA1, 0xAC);
    mark(0xAE, 0xFF);
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      forward[b] = direct[b] ? static_cast<char32_t>(b) : next++;
      backward.emplace(forward[b], static_cast<std::uint8_t>(b));
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

char32_t to_code_point(std::uint8_t byte) noexcept {
  return tables().forward[byte];
}

int to_byte(char32_t cp) noexcept {
  const auto& back = tables().backward;
  auto it = back.find(cp);
  return it == back.end() ? -1 : it->second;
}

std::string encode_bytes(std::string_view raw) {
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) utf8::append(out, to_code_point(c));
  return out;
}

}  // namespace byte_map

Vocabulary::Vocabulary(std::unordered_map<std::string, TokenId> pieces)
    : piece_to_id_(std::move(pieces)) {
  const std::size_t n = piece_to_id_.size();
  id_to_piece_.assign(n, {});
  std::vector<bool> seen(n, false);
  for (const auto& [piece, id] : piece_to_id_) {
    if (id >= n) {
      fail(ErrorKind::asset_consistency,
           "vocabulary ids are not contiguous: id " + std::to_string(id) +
               " with " + std::to_string(n) + " pieces");
    }
    if (seen[id]) {
      fail(ErrorKind::asset_consistency,
           "vocabulary id " + std::to_string(id) + " assigned twice");
    }
    seen[id] = true;
    id_to_piece_[id] = piece;
  }

  id_to_bytes_.resize(n);
  special_.assign(n, false);
  printable_.assign(n, false);
  for (std::size_t id = 0; id < n; ++id) {
    const std::string& piece = id_to_piece_[id];
    std::u32string cps;
    // Control tokens in the <|name|> convention (GPT-2's <|endoftext|>)
    // spell out in mapped characters, so they are recognised by shape.
    bool special = piece.empty() || !utf8::decode_strict(piece, cps) ||
                   (piece.size() > 4 && piece.starts_with("<|") && piece.ends_with("|>"));
    std::string raw;
    if (!special) {
      for (char32_t cp : cps) {
        int b = byte_map::to_byte(cp);
        if (b < 0) {
          special = true;
          break;
        }
        raw.push_back(static_cast<char>(b));
      }
    }
    special_[id] = special;
    id_to_bytes_[id] = special ? piece : raw;
    if (!special) {
      std::u32string decoded;
      bool ok = utf8::decode_strict(raw, decoded);
      bool controls = std::any_of(decoded.begin(), decoded.end(), [](char32_t c) {
        return c < 0x20 || c == 0x7F || (c >= 0x80 && c < 0xA0);
      });
      printable_[id] = ok && !controls;
    }
  }
}

const std::string& Vocabulary::piece(TokenId id) const {
  if (id >= id_to_piece_.size()) {
    fail(ErrorKind::invalid_id, "token id " + std::to_string(id) +
                                    " out of range for vocabulary of size " +
                                    std::to_string(size()));
  }
  return id_to_piece_[id];
}

bool Vocabulary::find(std::string_view piece, TokenId& out) const {
  auto it = piece_to_id_.find(std::string(piece));
  if (it == piece_to_id_.end()) return false;
  out = it->second;
  return true;
}

MergeRules::MergeRules(std::vector<MergeRule> rules, const Vocabulary& vocab)
    : rules_(std::move(rules)) {
  table_.reserve(rules_.size());
  for (std::size_t rank = 0; rank < rules_.size(); ++rank) {
    const auto& r = rules_[rank];
    TokenId l = 0, rt = 0, merged = 0;
    if (!vocab.find(r.left, l) || !vocab.find(r.right, rt)) {
      fail(ErrorKind::asset_consistency,
           "merge " + std::to_string(rank) + " (" + r.left + " " + r.right +
               ") references a piece missing from the vocabulary");
    }
    if (!vocab.find(r.left + r.right, merged)) {
      fail(ErrorKind::asset_consistency,
           "merge " + std::to_string(rank) + " (" + r.left + " " + r.right +
               ") produces unknown piece '" + r.left + r.right + "'");
    }
    auto [it, inserted] = table_.emplace(
        key(l, rt), Resolved{static_cast<std::uint32_t>(rank), merged});
    if (!inserted) {
      fail(ErrorKind::asset_consistency,
           "duplicate merge (" + r.left + " " + r.right + ") at rank " +
               std::to_string(rank));
    }
  }
}

const MergeRules::Resolved* MergeRules::lookup(TokenId left,
                                               TokenId right) const {
  auto it = table_.find(key(left, right));
  return it == table_.end() ? nullptr : &it->second;
}

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}
bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_other(unsigned char c) {
  return !is_space(c) && !is_letter(c) && !is_digit(c);
}

}  // namespace

std::vector<std::string_view> gpt2_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  const std::size_t n = text.size();
  auto at = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  auto run = [&](std::size_t i, bool (*cls)(unsigned char)) {
    while (i < n && cls(at(i))) ++i;
    return i;
  };

  std::size_t i = 0;
  while (i < n) {
    const std::size_t start = i;
    if (at(i) == '\'' && i + 1 < n) {
      std::string_view rest = text.substr(i + 1);
      std::size_t len = 0;
      if (rest.starts_with("re") || rest.starts_with("ve") ||
          rest.starts_with("ll")) {
        len = 3;
      } else if (rest[0] == 's' || rest[0] == 't' || rest[0] == 'm' ||
                 rest[0] == 'd') {
        len = 2;
      }
      if (len != 0) {
        chunks.push_back(text.substr(i, len));
        i += len;
        continue;
      }
    }
    std::size_t j = (at(i) == ' ' && i + 1 < n && !is_space(at(i + 1))) ? i + 1 : i;
    if (is_letter(at(j))) {
      i = run(j, is_letter);
    } else if (is_digit(at(j))) {
      i = run(j, is_digit);
    } else if (is_other(at(j))) {
      i = run(j, is_other);
    } else {
      std::size_t end = run(i, is_space);
      // \s+(?!\S): leave the last whitespace for the following word.
      if (end < n && end - i > 1) --end;
      i = end;
    }
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

namespace {

void encode_chunk(std::string_view chunk, const Vocabulary& vocab,
                  const MergeRules& merges, std::vector<TokenId>& out) {
  const std::size_t n = chunk.size();
  std::vector<TokenId> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string piece;
    utf8::append(piece, byte_map::to_code_point(static_cast<std::uint8_t>(chunk[i])));
    if (!vocab.find(piece, ids[i])) {
      fail(ErrorKind::asset_consistency,
           "vocabulary lacks the base piece for byte " +
               std::to_string(static_cast<unsigned char>(chunk[i])));
    }
  }
  if (n < 2 || merges.size() == 0) {
    out.insert(out.end(), ids.begin(), ids.end());
    return;
  }

  // Doubly linked list over original positions; a node keeps its index so
  // heap order (rank, index) is rank first, then leftmost.
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> prev(n), next(n);
  std::vector<bool> alive(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    prev[i] = i == 0 ? none : i - 1;
    next[i] = i + 1 == n ? none : i + 1;
  }

  struct Candidate {
    std::uint32_t rank;
    std::size_t left;
    std::size_t right;
    TokenId left_id;
    TokenId right_id;
    bool operator>(const Candidate& o) const {
      return rank != o.rank ? rank > o.rank : left > o.left;
    }
  };
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
  auto consider = [&](std::size_t l) {
    if (l == none || next[l] == none) return;
    std::size_t r = next[l];
    if (const auto* m = merges.lookup(ids[l], ids[r])) {
      heap.push({m->rank, l, r, ids[l], ids[r]});
    }
  };
  for (std::size_t i = 0; i + 1 < n; ++i) consider(i);

  while (!heap.empty()) {
    Candidate c = heap.top();
    heap.pop();
    if (!alive[c.left] || !alive[c.right] || next[c.left] != c.right ||
        ids[c.left] != c.left_id || ids[c.right] != c.right_id) {
      continue;
    }
    ids[c.left] = merges.lookup(c.left_id, c.right_id)->merged;
    alive[c.right] = false;
    next[c.left] = next[c.right];
    if (next[c.right] != none) prev[next[c.right]] = c.left;
    consider(prev[c.left]);
    consider(c.left);
  }
  for (std::size_t i = 0; i != none; i = next[i]) out.push_back(ids[i]);
}

TokenSequence encode_impl(std::string_view text, const Vocabulary& vocab,
                          const MergeRules& merges, Pretokenizer pre) {
  if (text.empty()) fail(ErrorKind::empty_input, "cannot encode empty text");
  TokenSequence seq;
  if (pre == Pretokenizer::gpt2) {
    for (auto chunk : gpt2_chunks(text)) encode_chunk(chunk, vocab, merges, seq.ids);
  } else {
    encode_chunk(text, vocab, merges, seq.ids);
  }
  return seq;
}

DecodeResult decode_impl(std::span<const TokenId> ids, const Vocabulary& vocab) {
  if (ids.empty()) fail(ErrorKind::empty_input, "cannot decode empty sequence");
  std::string raw;
  for (TokenId id : ids) {
    if (id >= vocab.size()) {
      fail(ErrorKind::invalid_id, "token id " + std::to_string(id) +
                                      " out of range for vocabulary of size " +
                                      std::to_string(vocab.size()));
    }
    raw += vocab.bytes(id);
  }
  DecodeResult r;
  r.lossy = utf8::sanitize(raw, r.text);
  return r;
}

}  // namespace

TokenSequence Tokenizer::encode(std::string_view text) const {
  return encode_impl(text, vocab_, merges_, pre_);
}

DecodeResult Tokenizer::decode(std::span<const TokenId> ids) const {
  return decode_impl(ids, vocab_);
}

DecodeResult Tokenizer::decode(const TokenSequence& seq) const {
  return decode(std::span<const TokenId>(seq.ids));
}

namespace {

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + offset, '\n'));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Vocabulary parse_vocab_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::parse, "vocab line " +
                               std::to_string(line_of_offset(json_text, e.byte)) +
                               ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::parse, "vocab line 1: expected a JSON object");
  std::unordered_map<std::string, TokenId> pieces;
  pieces.reserve(j.size());
  for (const auto& [piece, value] : j.items()) {
    if (!value.is_number_integer() || value.get<long long>() < 0 ||
        value.get<long long>() > 0xFFFFFFFFLL) {
      fail(ErrorKind::parse, "vocab entry '" + piece + "': id must be a non-negative integer");
    }
    pieces.emplace(piece, static_cast<TokenId>(value.get<long long>()));
  }
  return Vocabulary(std::move(pieces));
}

std::vector<MergeRule> parse_merges_text(std::string_view text) {
  std::vector<MergeRule> rules;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    std::size_t sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string_view::npos) {
      fail(ErrorKind::parse, "merges line " + std::to_string(line_no) +
                                 ": expected two space-separated pieces");
    }
    rules.push_back({std::string(line.substr(0, sp)), std::string(line.substr(sp + 1))});
  }
  return rules;
}

std::pair<Vocabulary, MergeRules> load_assets(
    const std::filesystem::path& vocab_path,
    const std::filesystem::path& merges_path) {
  Vocabulary vocab = parse_vocab_json(read_file(vocab_path));
  MergeRules merges(parse_merges_text(read_file(merges_path)), vocab);
  return {std::move(vocab), std::move(merges)};
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab,
                     const MergeRules& merges) {
  return encode_impl(text, vocab, merges, Pretokenizer::none);
}

DecodeResult decode(const TokenSequence& seq, const Vocabulary& vocab) {
  return decode_impl(seq.ids, vocab);
}

const char* to_string(Pretokenizer p) noexcept {
  return p == Pretokenizer::gpt2 ? "gpt2" : "none";
}

Pretokenizer pretokenizer_from_string(std::string_view name) {
  if (name == "none") return Pretokenizer::none;
  if (name == "gpt2") return Pretokenizer::gpt2;
  fail(ErrorKind::config, "unknown pretokenizer '" + std::string(name) + "'");
}

}  // namespace hidegate
