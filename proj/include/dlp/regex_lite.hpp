#pragma once

#include <bitset>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlp/errors.hpp"

// A deliberately small regex engine: Thompson NFA simulation, linear in
// text length for a fixed pattern, with no backtracking and no
// backreferences. Running untrusted-ish rule patterns against gateway
// traffic must never go quadratic-exponential, which rules out the
// standard library engine.
//
// Supported syntax: literals, '.', character classes [...] (ranges,
// negation, \d \w \s inside), escapes \d \D \w \W \s \S \n \r \t \f \v
// \xHH and escaped punctuation, anchors ^ $ \b \B, grouping ( ) / (?: ),
// alternation |, quantifiers * + ? {m} {m,} {m,n}.
//
// Match semantics: leftmost-longest, non-overlapping, empty-width matches
// never reported.

namespace dlp {

class RegexLite {
public:
  RegexLite() = default;

  static RegexLite compile(std::string_view pattern,
                           const std::string& rule_id = {}) {
    RegexLite re;
    Parser parser(pattern, rule_id, re);
    re.start_ = parser.run();
    return re;
  }

  struct Match {
    size_t begin;
    size_t end;
  };

  // All non-overlapping leftmost-longest matches.
  std::vector<Match> find_all(std::string_view text) const {
    std::vector<Match> out;
    size_t pos = 0;
    while (pos <= text.size()) {
      std::optional<size_t> end = longest_match_at(text, pos);
      if (end && *end > pos) {
        out.push_back({pos, *end});
        pos = *end;
      } else {
        ++pos;
      }
    }
    return out;
  }

  bool search(std::string_view text) const {
    for (size_t pos = 0; pos <= text.size(); ++pos)
      if (longest_match_at(text, pos)) return true;
    return false;
  }

  // Longest match starting exactly at `pos`, including empty matches.
  std::optional<size_t> longest_match_at(std::string_view text,
                                         size_t pos) const {
    std::vector<uint32_t> cur, next;
    std::vector<uint8_t> on_cur(states_.size(), 0), on_next(states_.size(), 0);
    add_state(cur, on_cur, start_, text, pos);
    std::optional<size_t> best;
    if (contains_accept(cur)) best = pos;
    for (size_t i = pos; i < text.size() && !cur.empty(); ++i) {
      unsigned char c = static_cast<unsigned char>(text[i]);
      next.clear();
      std::fill(on_next.begin(), on_next.end(), 0);
      for (uint32_t s : cur) {
        const State& st = states_[s];
        if (st.kind == Kind::chars && st.cls.test(c))
          add_state(next, on_next, st.next1, text, i + 1);
      }
      cur.swap(next);
      on_cur.swap(on_next);
      if (contains_accept(cur)) best = i + 1;
    }
    return best;
  }

private:
  enum class Kind : uint8_t { chars, split, assertion, accept };
  enum class Assert : uint8_t { text_start, text_end, word_boundary, not_word_boundary };

  struct State {
    Kind kind;
    std::bitset<256> cls;  // chars
    Assert assert_kind = Assert::text_start;
    uint32_t next1 = 0;
    uint32_t next2 = 0;
  };

  static bool is_word_byte(int c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           (c >= '0' && c <= '9') || c == '_';
  }

  static bool eval_assert(Assert a, std::string_view text, size_t at) {
    int prev = at > 0 ? static_cast<unsigned char>(text[at - 1]) : -1;
    int next = at < text.size() ? static_cast<unsigned char>(text[at]) : -1;
    switch (a) {
      case Assert::text_start: return at == 0;
      case Assert::text_end: return at == text.size();
      case Assert::word_boundary:
        return is_word_byte(prev) != is_word_byte(next);
      case Assert::not_word_boundary:
        return is_word_byte(prev) == is_word_byte(next);
    }
    return false;
  }

  void add_state(std::vector<uint32_t>& set, std::vector<uint8_t>& seen,
                 uint32_t s, std::string_view text, size_t at) const {
    if (seen[s]) return;
    seen[s] = 1;
    const State& st = states_[s];
    switch (st.kind) {
      case Kind::split:
        add_state(set, seen, st.next1, text, at);
        add_state(set, seen, st.next2, text, at);
        break;
      case Kind::assertion:
        if (eval_assert(st.assert_kind, text, at))
          add_state(set, seen, st.next1, text, at);
        break;
      default:
        set.push_back(s);
    }
  }

  bool contains_accept(const std::vector<uint32_t>& set) const {
    for (uint32_t s : set)
      if (states_[s].kind == Kind::accept) return true;
    return false;
  }

  // --- compilation -------------------------------------------------------

  // AST kept only during compile.
  struct Ast {
    enum class Type { empty, chars, concat, alternate, repeat, assertion };
    Type type = Type::empty;
    std::bitset<256> cls;
    Assert assert_kind = Assert::text_start;
    std::vector<Ast> children;
    size_t rep_min = 0;
    size_t rep_max = 0;  // SIZE_MAX == unbounded
  };

  class Parser {
   public:
    Parser(std::string_view pattern, const std::string& rule_id, RegexLite& re)
        : p_(pattern), rule_id_(rule_id), re_(re) {}

    uint32_t run() {
      Ast ast = parse_alternation();
      if (pos_ != p_.size()) fail("unbalanced ')'");
      uint32_t accept = re_.add_state({Kind::accept, {}, Assert::text_start, 0, 0});
      return compile_ast(ast, accept);
    }

   private:
    [[noreturn]] void fail(const std::string& why) const {
      throw Error(Errc::bad_pattern,
                  "bad pattern" +
                      (rule_id_.empty() ? std::string() : " [" + rule_id_ + "]") +
                      " at offset " + std::to_string(pos_) + ": " + why);
    }

    bool eof() const { return pos_ >= p_.size(); }
    char peek() const { return pos_ < p_.size() ? p_[pos_] : '\0'; }
    char take() { return p_[pos_++]; }

    Ast parse_alternation() {
      Ast first = parse_concat();
      if (peek() != '|') return first;
      Ast alt;
      alt.type = Ast::Type::alternate;
      alt.children.push_back(std::move(first));
      while (peek() == '|') {
        ++pos_;
        alt.children.push_back(parse_concat());
      }
      return alt;
    }

    Ast parse_concat() {
      Ast cat;
      cat.type = Ast::Type::concat;
      while (!eof() && peek() != '|' && peek() != ')')
        cat.children.push_back(parse_repeat());
      if (cat.children.size() == 1) return std::move(cat.children.front());
      return cat;
    }

    Ast parse_repeat() {
      Ast atom = parse_atom();
      while (!eof()) {
        char c = peek();
        size_t lo, hi;
        if (c == '*') { lo = 0; hi = SIZE_MAX; ++pos_; }
        else if (c == '+') { lo = 1; hi = SIZE_MAX; ++pos_; }
        else if (c == '?') { lo = 0; hi = 1; ++pos_; }
        else if (c == '{') {
          size_t save = pos_;
          if (!parse_bounds(&lo, &hi)) { pos_ = save; break; }
        } else {
          break;
        }
        if (atom.type == Ast::Type::assertion)
          fail("quantifier on an anchor");
        Ast rep;
        rep.type = Ast::Type::repeat;
        rep.rep_min = lo;
        rep.rep_max = hi;
        rep.children.push_back(std::move(atom));
        atom = std::move(rep);
      }
      return atom;
    }

    bool parse_bounds(size_t* lo, size_t* hi) {
      ++pos_;  // '{'
      if (eof() || !isdigit(static_cast<unsigned char>(peek()))) return false;
      *lo = parse_int();
      if (peek() == '}') {
        ++pos_;
        *hi = *lo;
      } else if (peek() == ',') {
        ++pos_;
        if (peek() == '}') {
          ++pos_;
          *hi = SIZE_MAX;
        } else if (isdigit(static_cast<unsigned char>(peek()))) {
          *hi = parse_int();
          if (peek() != '}') fail("expected '}' in bounds");
          ++pos_;
        } else {
          return false;
        }
      } else {
        return false;
      }
      if (*hi != SIZE_MAX && *hi < *lo) fail("bounds out of order");
      if (*lo > kMaxRepeat || (*hi != SIZE_MAX && *hi > kMaxRepeat))
        fail("repetition bound too large");
      return true;
    }

    size_t parse_int() {
      size_t v = 0;
      while (!eof() && isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + static_cast<size_t>(take() - '0');
        if (v > 1000000) fail("number too large");
      }
      return v;
    }

    Ast parse_atom() {
      if (eof()) fail("pattern ended unexpectedly");
      char c = take();
      switch (c) {
        case '(': {
          if (peek() == '?') {
            ++pos_;
            if (peek() == ':') {
              ++pos_;
            } else {
              fail("lookaround and named groups are not supported");
            }
          }
          Ast inner = parse_alternation();
          if (peek() != ')') fail("missing ')'");
          ++pos_;
          return inner;
        }
        case ')': fail("unexpected ')'");
        case '[': return parse_class();
        case '.': {
          Ast a;
          a.type = Ast::Type::chars;
          a.cls.set();
          a.cls.reset('\n');
          return a;
        }
        case '^': return make_assert(Assert::text_start);
        case '$': return make_assert(Assert::text_end);
        case '*': case '+': case '?': fail("quantifier with nothing to repeat");
        case '\\': return parse_escape(/*in_class=*/false);
        default: return make_char(static_cast<unsigned char>(c));
      }
    }

    static Ast make_assert(Assert k) {
      Ast a;
      a.type = Ast::Type::assertion;
      a.assert_kind = k;
      return a;
    }

    static Ast make_char(unsigned char c) {
      Ast a;
      a.type = Ast::Type::chars;
      a.cls.set(c);
      return a;
    }

    static void class_digits(std::bitset<256>& b) {
      for (int c = '0'; c <= '9'; ++c) b.set(static_cast<size_t>(c));
    }
    static void class_word(std::bitset<256>& b) {
      class_digits(b);
      for (int c = 'a'; c <= 'z'; ++c) b.set(static_cast<size_t>(c));
      for (int c = 'A'; c <= 'Z'; ++c) b.set(static_cast<size_t>(c));
      b.set('_');
    }
    static void class_space(std::bitset<256>& b) {
      for (char c : {' ', '\t', '\r', '\n', '\f', '\v'})
        b.set(static_cast<unsigned char>(c));
    }

    Ast parse_escape(bool in_class) {
      if (eof()) fail("trailing backslash");
      char e = take();
      Ast a;
      a.type = Ast::Type::chars;
      switch (e) {
        case 'd': class_digits(a.cls); return a;
        case 'D': class_digits(a.cls); a.cls.flip(); return a;
        case 'w': class_word(a.cls); return a;
        case 'W': class_word(a.cls); a.cls.flip(); return a;
        case 's': class_space(a.cls); return a;
        case 'S': class_space(a.cls); a.cls.flip(); return a;
        case 'n': return make_char('\n');
        case 'r': return make_char('\r');
        case 't': return make_char('\t');
        case 'f': return make_char('\f');
        case 'v': return make_char('\v');
        case 'b':
          if (in_class) fail("\\b not supported inside a class");
          return make_assert(Assert::word_boundary);
        case 'B':
          if (in_class) fail("\\B not supported inside a class");
          return make_assert(Assert::not_word_boundary);
        case 'x': {
          if (pos_ + 2 > p_.size()) fail("\\x needs two hex digits");
          int hi = hex_digit(p_[pos_]), lo = hex_digit(p_[pos_ + 1]);
          if (hi < 0 || lo < 0) fail("\\x needs two hex digits");
          pos_ += 2;
          return make_char(static_cast<unsigned char>((hi << 4) | lo));
        }
        default:
          if (e >= '1' && e <= '9')
            fail("backreferences are not supported");
          if ((e >= 'a' && e <= 'z') || (e >= 'A' && e <= 'Z') ||
              (e >= '0' && e <= '9'))
            fail(std::string("unknown escape \\") + e);
          return make_char(static_cast<unsigned char>(e));  // punctuation
      }
    }

    static int hex_digit(char c) {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    }

    Ast parse_class() {
      Ast a;
      a.type = Ast::Type::chars;
      bool negate = false;
      if (peek() == '^') {
        negate = true;
        ++pos_;
      }
      bool first = true;
      while (true) {
        if (eof()) fail("unterminated character class");
        char c = peek();
        if (c == ']' && !first) {
          ++pos_;
          break;
        }
        first = false;
        std::bitset<256> item;
        bool single = false;
        unsigned char single_val = 0;
        if (c == '\\') {
          ++pos_;
          Ast esc = parse_escape(/*in_class=*/true);
          item = esc.cls;
          if (item.count() == 1) {
            single = true;
            for (size_t i = 0; i < 256; ++i)
              if (item.test(i)) single_val = static_cast<unsigned char>(i);
          }
        } else {
          ++pos_;
          single = true;
          single_val = static_cast<unsigned char>(c);
          item.set(single_val);
        }
        if (single && peek() == '-' && pos_ + 1 < p_.size() &&
            p_[pos_ + 1] != ']') {
          ++pos_;  // '-'
          char hi_c = take();
          unsigned char hi;
          if (hi_c == '\\') {
            Ast esc = parse_escape(true);
            if (esc.cls.count() != 1) fail("bad range endpoint");
            hi = 0;
            for (size_t i = 0; i < 256; ++i)
              if (esc.cls.test(i)) hi = static_cast<unsigned char>(i);
          } else {
            hi = static_cast<unsigned char>(hi_c);
          }
          if (hi < single_val) fail("range out of order");
          for (unsigned int v = single_val; v <= hi; ++v)
            a.cls.set(v);
          continue;
        }
        a.cls |= item;
      }
      if (negate) a.cls.flip();
      if (a.cls.none()) fail("empty character class");
      return a;
    }

    // --- AST -> NFA ------------------------------------------------------

    // Compiles `ast` so that every way through it ends at `cont`; returns
    // the entry state.
    uint32_t compile_ast(const Ast& ast, uint32_t cont) {
      check_budget();
      switch (ast.type) {
        case Ast::Type::empty:
          return cont;
        case Ast::Type::chars: {
          return re_.add_state({Kind::chars, ast.cls, Assert::text_start, cont, 0});
        }
        case Ast::Type::assertion:
          return re_.add_state(
              {Kind::assertion, {}, ast.assert_kind, cont, 0});
        case Ast::Type::concat: {
          uint32_t entry = cont;
          for (auto it = ast.children.rbegin(); it != ast.children.rend(); ++it)
            entry = compile_ast(*it, entry);
          return entry;
        }
        case Ast::Type::alternate: {
          uint32_t entry = compile_ast(ast.children.back(), cont);
          for (auto it = ast.children.rbegin() + 1; it != ast.children.rend();
               ++it) {
            uint32_t branch = compile_ast(*it, cont);
            entry = re_.add_state(
                {Kind::split, {}, Assert::text_start, branch, entry});
          }
          return entry;
        }
        case Ast::Type::repeat: {
          const Ast& inner = ast.children.front();
          uint32_t entry = cont;
          if (ast.rep_max == SIZE_MAX) {
            // loop: split -> inner -> split
            uint32_t loop = re_.add_state(
                {Kind::split, {}, Assert::text_start, 0, cont});
            uint32_t body = compile_ast(inner, loop);
            re_.states_[loop].next1 = body;
            entry = loop;
          } else {
            for (size_t i = ast.rep_min; i < ast.rep_max; ++i) {
              uint32_t body = compile_ast(inner, entry);
              entry = re_.add_state(
                  {Kind::split, {}, Assert::text_start, body, entry});
            }
          }
          for (size_t i = 0; i < ast.rep_min; ++i)
            entry = compile_ast(inner, entry);
          return entry;
        }
      }
      fail("internal: unhandled ast node");
    }

    void check_budget() {
      if (re_.states_.size() > kMaxStates)
        fail("pattern compiles to too many states");
    }

    static constexpr size_t kMaxRepeat = 256;
    static constexpr size_t kMaxStates = 20000;

    std::string_view p_;
    const std::string& rule_id_;
    RegexLite& re_;
    size_t pos_ = 0;
  };

  uint32_t add_state(State s) {
    states_.push_back(std::move(s));
    return static_cast<uint32_t>(states_.size() - 1);
  }

  std::vector<State> states_;
  uint32_t start_ = 0;
};

}  // namespace dlp
