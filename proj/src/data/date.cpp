#include "masktab/data/date.hpp"

#include <charconv>
#include <cstdio>

#include "masktab/errors.hpp"

namespace masktab::data {

int days_in_month(int year, int month) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month == 2) {
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return leap ? 29 : 28;
  }
  return kDays[month - 1];
}

namespace {

int parse_field(std::string_view text, std::string_view field) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw IngestionError("malformed date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  return value;
}

}  // namespace

Date Date::parse(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw IngestionError("malformed date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  Date d;
  d.year = parse_field(text, text.substr(0, 4));
  d.month = parse_field(text, text.substr(5, 2));
  d.day = parse_field(text, text.substr(8, 2));
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) {
    throw IngestionError("invalid calendar date '" + std::string(text) + "'");
  }
  return d;
}

std::string Date::str() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

std::string Date::month_key() const { return str().substr(0, 7); }

}  // namespace masktab::data
