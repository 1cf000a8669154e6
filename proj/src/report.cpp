#include "kvsim/report.hpp"

#include <fstream>

#include <fmt/format.h>

#include "kvsim/attacker.hpp"
#include "kvsim/errors.hpp"

namespace kvsim {

RunSummary load_run_summary(const std::filesystem::path& dir) {
  const auto path = dir / "report.json";
  std::ifstream in(path);
  if (!in) throw IoError("missing report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunSummary s;
  s.label = j.value("scenario", dir.filename().string()) + "/" + j.value("point", std::string("base"));
  s.aggregate = AggregateReport::from_json(j.at("aggregate"));
  return s;
}

namespace {

std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string pad(const std::string& s, std::size_t w, bool left) {
  const std::size_t d = display_width(s);
  const std::string fill(w > d ? w - d : 0, ' ');
  return left ? s + fill : fill + s;
}

std::string fmt_opt(const std::optional<Summary>& s, bool p99, double scale, int prec) {
  if (!s) return "-";
  return fmt::format("{:.{}f}", (p99 ? s->p99 : s->mean) * scale, prec);
}

}  // namespace

std::string render_table(const std::vector<RunSummary>& runs,
                         const std::optional<RunSummary>& baseline) {
  const std::vector<std::string> header = {
      "Run",  "TTFT",  "TTFT P99", "TPOT", "TPOT P99", "Preempt#", "Attack Request#",
      "Cost ($)", "ΔTTFT", "ΔTPOT"};
  std::vector<std::vector<std::string>> rows;
  for (const RunSummary& r : runs) {
    const ClassReport& b = r.aggregate.cls(TenantClass::Benign);
    const auto& a = r.aggregate.attacker;
    const std::int64_t attack_reqs =
        a.value("attack_requests", std::int64_t{0}) + a.value("probe_requests", std::int64_t{0});
    const std::int64_t cost_units = a.value("cost_units", std::int64_t{0});
    std::string dttft = "-";
    std::string dtpot = "-";
    if (baseline) {
      try {
        const Slowdown s = slowdown(r.aggregate, baseline->aggregate);
        dttft = fmt::format("{:.2f}×", s.ttft);
        dtpot = fmt::format("{:.2f}×", s.tpot);
      } catch (const Error&) {
        // leave "-" when either side lacks benign samples
      }
    }
    rows.push_back({r.label, fmt_opt(b.ttft_us, false, 1e-6, 3), fmt_opt(b.ttft_us, true, 1e-6, 3),
                    fmt_opt(b.tpot_us, false, 1e-3, 2), fmt_opt(b.tpot_us, true, 1e-3, 2),
                    std::to_string(r.aggregate.total_preemptions), std::to_string(attack_reqs),
                    Money{cost_units}.to_string(), dttft, dtpot});
  }
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    widths[c] = display_width(header[c]);
    for (const auto& row : rows) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out = "|";
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out += " " + pad(cells[c], widths[c], c == 0) + " |";
    }
    return out + "\n";
  };
  std::string out = line(header);
  out += "|";
  for (std::size_t w : widths) out += std::string(w + 2, '-') + "|";
  out += "\n";
  for (const auto& row : rows) out += line(row);
  out += "TTFT and TTFT P99 in seconds; TPOT and TPOT P99 in milliseconds (benign requests).\n";
  if (baseline) out += "Δ columns: ratio of benign means to baseline " + baseline->label + ".\n";
  return out;
}

}  // namespace kvsim
