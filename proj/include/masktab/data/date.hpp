#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace masktab::data {

/// Calendar date (proleptic Gregorian), serialised as YYYY-MM-DD.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;

  /// Throws IngestionError on malformed or impossible dates.
  static Date parse(std::string_view text);
  std::string str() const;
  /// "YYYY-MM", the bucket key for monthly reporting.
  std::string month_key() const;
  /// Months since year 0, for ordering and arithmetic on months.
  int month_index() const { return year * 12 + (month - 1); }
};

int days_in_month(int year, int month);

}  // namespace masktab::data
