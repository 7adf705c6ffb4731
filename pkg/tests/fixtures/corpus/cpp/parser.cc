#include <map>
#include <string>
#include <vector>

namespace cfg {

struct Entry {
  std::string key;
  std::string value;
};

class Parser {
 public:
  explicit Parser(std::string text) : text_(std::move(text)), pos_(0) {}

  std::vector<Entry> parse() {
    std::vector<Entry> entries;
    while (pos_ < text_.size()) {
      skip_space();
      if (pos_ >= text_.size() || text_[pos_] == '#') {
        skip_line();
        continue;
      }
      entries.push_back(read_entry());
    }
    return entries;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) {
      pos_++;
    }
  }

  void skip_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') {
      pos_++;
    }
    if (pos_ < text_.size()) {
      pos_++;
    }
  }

  Entry read_entry() {
    Entry entry;
    while (pos_ < text_.size() && text_[pos_] != '=') {
      entry.key.push_back(text_[pos_++]);
    }
    if (pos_ < text_.size()) {
      pos_++;  // '='
    }
    while (pos_ < text_.size() && text_[pos_] != '\n') {
      entry.value.push_back(text_[pos_++]);
    }
    return entry;
  }

  std::string text_;
  size_t pos_;
};

}  // namespace cfg
