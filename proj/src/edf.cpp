#include "sst/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>

#include "sst/errors.hpp"

namespace sst {

namespace {

constexpr std::size_t kFixedHeader = 256;

void put_field(std::string& out, std::string_view value, std::size_t width, const char* name) {
  if (value.size() > width) {
    throw ContractError(std::string("EDF field ") + name + " '" + std::string(value) +
                        "' exceeds " + std::to_string(width) + " bytes");
  }
  out.append(value);
  out.append(width - value.size(), ' ');
}

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class FieldReader {
 public:
  FieldReader(std::string_view bytes, bool lenient, std::vector<std::string>& warnings)
      : bytes_(bytes), lenient_(lenient), warnings_(warnings) {}

  std::string text(std::size_t offset, std::size_t width, const std::string& name) {
    std::string s(bytes_.substr(offset, width));
    bool repaired = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto c = static_cast<unsigned char>(s[i]);
      if (c < 0x20 || c > 0x7e) {
        if (!lenient_) throw ParseError("non-ASCII byte in EDF field " + name, offset + i);
        s[i] = ' ';
        repaired = true;
      }
    }
    if (repaired) warn("replaced non-printable bytes in " + name, offset);
    const auto end = s.find_last_not_of(' ');
    s.erase(end == std::string::npos ? 0 : end + 1);
    return s;
  }

  // Numeric field: left-aligned, space padded. Lenient mode also accepts
  // leading blanks.
  template <typename T>
  T number(std::size_t offset, std::size_t width, const std::string& name) {
    std::string s = text(offset, width, name);
    const auto start = s.find_first_not_of(' ');
    if (start == std::string::npos) throw ParseError("empty numeric EDF field " + name, offset);
    if (start > 0) {
      if (!lenient_) throw ParseError("EDF field " + name + " is not left-aligned", offset);
      warn("trimmed leading blanks in " + name, offset);
      s.erase(0, start);
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (s.front() == '+') s.erase(0, 1);
    }
    T value{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ParseError("non-numeric EDF field " + name + " '" + s + "'", offset);
    }
    return value;
  }

  void warn(const std::string& what, std::size_t offset) {
    warnings_.push_back(what + " at byte " + std::to_string(offset));
  }

 private:
  std::string_view bytes_;
  bool lenient_;
  std::vector<std::string>& warnings_;
};

}  // namespace

double digital_to_physical(const EdfSignalHeader& s, std::int16_t d) {
  return (static_cast<double>(d) - s.digital_min) * (s.physical_max - s.physical_min) /
             static_cast<double>(s.digital_max - s.digital_min) +
         s.physical_min;
}

std::int16_t physical_to_digital(const EdfSignalHeader& s, double v) {
  const double d = (v - s.physical_min) * static_cast<double>(s.digital_max - s.digital_min) /
                       (s.physical_max - s.physical_min) +
                   s.digital_min;
  const double r = std::clamp(std::round(d), static_cast<double>(s.digital_min),
                              static_cast<double>(s.digital_max));
  return static_cast<std::int16_t>(r);
}

std::string write_edf(EdfHeader header, const std::vector<std::vector<std::int16_t>>& digital) {
  const std::size_t ns = header.signals.size();
  if (digital.size() != ns) throw ContractError("write_edf: one sample vector per signal");
  if (ns == 0) throw ContractError("write_edf: no signals");
  const auto spr0 = static_cast<std::size_t>(header.signals[0].samples_per_record);
  if (spr0 == 0) throw ContractError("write_edf: samples_per_record must be positive");
  const std::size_t n_records = digital[0].size() / spr0;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = header.signals[i];
    if (s.samples_per_record <= 0 ||
        digital[i].size() != n_records * static_cast<std::size_t>(s.samples_per_record)) {
      throw ContractError("write_edf: signal " + std::to_string(i) +
                          " does not hold a whole number of records");
    }
    if (s.digital_min >= s.digital_max || s.physical_min == s.physical_max) {
      throw ContractError("write_edf: signal " + std::to_string(i) + " has a degenerate range");
    }
  }
  header.header_bytes = static_cast<int>(kFixedHeader * (1 + ns));
  header.n_records = static_cast<int>(n_records);

  std::string out;
  out.reserve(static_cast<std::size_t>(header.header_bytes));
  put_field(out, header.version, 8, "version");
  put_field(out, header.patient, 80, "patient");
  put_field(out, header.recording, 80, "recording");
  put_field(out, header.start_date, 8, "start date");
  put_field(out, header.start_time, 8, "start time");
  put_field(out, std::to_string(header.header_bytes), 8, "header bytes");
  put_field(out, header.reserved, 44, "reserved");
  put_field(out, std::to_string(header.n_records), 8, "records");
  put_field(out, format_number(header.record_duration_s), 8, "duration");
  put_field(out, std::to_string(ns), 4, "signals");
  const auto& sig = header.signals;
  for (const auto& s : sig) put_field(out, s.label, 16, "label");
  for (const auto& s : sig) put_field(out, s.transducer, 80, "transducer");
  for (const auto& s : sig) put_field(out, s.physical_dim, 8, "physical dimension");
  for (const auto& s : sig) put_field(out, format_number(s.physical_min), 8, "physical min");
  for (const auto& s : sig) put_field(out, format_number(s.physical_max), 8, "physical max");
  for (const auto& s : sig) put_field(out, std::to_string(s.digital_min), 8, "digital min");
  for (const auto& s : sig) put_field(out, std::to_string(s.digital_max), 8, "digital max");
  for (const auto& s : sig) put_field(out, s.prefiltering, 80, "prefiltering");
  for (const auto& s : sig) {
    put_field(out, std::to_string(s.samples_per_record), 8, "samples per record");
  }
  for (const auto& s : sig) put_field(out, s.reserved, 32, "signal reserved");

  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t i = 0; i < ns; ++i) {
      const auto spr = static_cast<std::size_t>(sig[i].samples_per_record);
      for (std::size_t k = 0; k < spr; ++k) {
        const auto u = static_cast<std::uint16_t>(digital[i][r * spr + k]);
        out.push_back(static_cast<char>(u & 0xff));
        out.push_back(static_cast<char>(u >> 8));
      }
    }
  }
  return out;
}

EdfFile parse_edf(std::string_view bytes, bool lenient) {
  if (bytes.size() < kFixedHeader) {
    throw ParseError("file shorter than the 256-byte EDF header", bytes.size());
  }
  EdfFile file;
  FieldReader rd(bytes, lenient, file.warnings);
  EdfHeader& h = file.header;
  h.version = rd.text(0, 8, "version");
  if (h.version != "0") {
    if (!lenient) throw ParseError("unsupported EDF version '" + h.version + "'", 0);
    rd.warn("unexpected version '" + h.version + "'", 0);
  }
  h.patient = rd.text(8, 80, "patient");
  h.recording = rd.text(88, 80, "recording");
  h.start_date = rd.text(168, 8, "start date");
  h.start_time = rd.text(176, 8, "start time");
  h.header_bytes = rd.number<int>(184, 8, "header bytes");
  h.reserved = rd.text(192, 44, "reserved");
  h.n_records = rd.number<int>(236, 8, "records");
  h.record_duration_s = rd.number<double>(244, 8, "duration");
  const int ns_raw = rd.number<int>(252, 4, "signals");
  if (ns_raw <= 0) throw ParseError("signal count must be positive", 252);
  const auto ns = static_cast<std::size_t>(ns_raw);
  if (!(h.record_duration_s > 0.0)) throw ParseError("record duration must be positive", 244);

  const std::size_t expected_header = kFixedHeader * (1 + ns);
  if (bytes.size() < expected_header) {
    throw ParseError("truncated signal header block, need " + std::to_string(expected_header) +
                         " bytes",
                     bytes.size());
  }
  if (static_cast<std::size_t>(h.header_bytes) != expected_header) {
    if (!lenient) {
      throw ParseError("header bytes " + std::to_string(h.header_bytes) + " != 256 * (1 + " +
                           std::to_string(ns) + ")",
                       184);
    }
    rd.warn("header bytes field disagrees with signal count", 184);
    h.header_bytes = static_cast<int>(expected_header);
  }

  h.signals.resize(ns);
  std::size_t off = kFixedHeader;
  auto each = [&](std::size_t width, auto&& fn) {
    for (std::size_t i = 0; i < ns; ++i) fn(h.signals[i], off + i * width, i);
    off += ns * width;
  };
  auto tag = [](const char* what, std::size_t i) {
    return std::string(what) + "[" + std::to_string(i) + "]";
  };
  each(16, [&](auto& s, std::size_t o, std::size_t i) { s.label = rd.text(o, 16, tag("label", i)); });
  each(80, [&](auto& s, std::size_t o, std::size_t i) {
    s.transducer = rd.text(o, 80, tag("transducer", i));
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.physical_dim = rd.text(o, 8, tag("physical dimension", i));
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.physical_min = rd.template number<double>(o, 8, tag("physical min", i));
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.physical_max = rd.template number<double>(o, 8, tag("physical max", i));
    if (s.physical_max == s.physical_min) {
      throw ParseError("physical min == physical max for signal " + std::to_string(i), o);
    }
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.digital_min = rd.template number<int>(o, 8, tag("digital min", i));
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.digital_max = rd.template number<int>(o, 8, tag("digital max", i));
    if (s.digital_min >= s.digital_max) {
      throw ParseError("digital min >= digital max for signal " + std::to_string(i), o);
    }
  });
  each(80, [&](auto& s, std::size_t o, std::size_t i) {
    s.prefiltering = rd.text(o, 80, tag("prefiltering", i));
  });
  each(8, [&](auto& s, std::size_t o, std::size_t i) {
    s.samples_per_record = rd.template number<int>(o, 8, tag("samples per record", i));
    if (s.samples_per_record <= 0) {
      throw ParseError("samples per record must be positive for signal " + std::to_string(i), o);
    }
  });
  each(32, [&](auto& s, std::size_t o, std::size_t i) {
    s.reserved = rd.text(o, 32, tag("signal reserved", i));
  });

  std::size_t record_bytes = 0;
  for (const auto& s : h.signals) record_bytes += 2 * static_cast<std::size_t>(s.samples_per_record);
  const std::size_t data_bytes = bytes.size() - expected_header;
  if (h.n_records < 0) {
    if (!lenient || h.n_records != -1) {
      throw ParseError("record count " + std::to_string(h.n_records) + " is not usable", 236);
    }
    rd.warn("record count unknown, derived from file size", 236);
    h.n_records = static_cast<int>(data_bytes / record_bytes);
  }
  const auto n_records = static_cast<std::size_t>(h.n_records);
  if (data_bytes < n_records * record_bytes) {
    const std::size_t complete = data_bytes / record_bytes;
    throw ParseError("truncated data record " + std::to_string(complete) + " of " +
                         std::to_string(n_records),
                     expected_header + complete * record_bytes);
  }
  if (data_bytes > n_records * record_bytes) {
    const std::size_t extra_at = expected_header + n_records * record_bytes;
    if (!lenient) throw ParseError("trailing bytes after the last data record", extra_at);
    rd.warn("ignored trailing bytes after the last data record", extra_at);
  }

  file.digital.resize(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    file.digital[i].reserve(n_records * static_cast<std::size_t>(h.signals[i].samples_per_record));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + expected_header;
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t i = 0; i < ns; ++i) {
      const auto spr = static_cast<std::size_t>(h.signals[i].samples_per_record);
      for (std::size_t k = 0; k < spr; ++k, p += 2) {
        file.digital[i].push_back(static_cast<std::int16_t>(p[0] | (p[1] << 8)));
      }
    }
  }

  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = h.signals[i];
    if (s.is_annotation()) {
      for (std::int16_t v : file.digital[i]) {
        const auto u = static_cast<std::uint16_t>(v);
        file.annotations.push_back(static_cast<char>(u & 0xff));
        file.annotations.push_back(static_cast<char>(u >> 8));
      }
      continue;
    }
    SignalTrace t{s.label, s.samples_per_record / h.record_duration_s, {}};
    t.samples.reserve(file.digital[i].size());
    for (std::int16_t d : file.digital[i]) t.samples.push_back(digital_to_physical(s, d));
    file.traces.push_back(std::move(t));
  }
  return file;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::W: return "W";
    case Stage::N1: return "N1";
    case Stage::N2: return "N2";
    case Stage::N3: return "N3";
    case Stage::REM: return "REM";
    case Stage::Other: break;
  }
  return "other";
}

const StageTable& default_stage_table() {
  static const StageTable table{
      {"Sleep stage W", Stage::W},       {"Sleep stage 1", Stage::N1},
      {"Sleep stage 2", Stage::N2},      {"Sleep stage 3", Stage::N3},
      {"Sleep stage 4", Stage::N3},      {"Sleep stage R", Stage::REM},
      {"Sleep stage N1", Stage::N1},     {"Sleep stage N2", Stage::N2},
      {"Sleep stage N3", Stage::N3},     {"Sleep stage ?", Stage::Other},
      {"Movement time", Stage::Other},
  };
  return table;
}

namespace {

double parse_tal_number(std::string_view s, bool signed_onset, std::size_t index,
                        std::size_t offset) {
  if (signed_onset) {
    if (s.empty() || (s[0] != '+' && s[0] != '-')) {
      throw ParseError("TAL " + std::to_string(index) + ": onset must start with + or -", offset);
    }
  }
  std::string_view digits = s;
  double sign = 1.0;
  if (!digits.empty() && (digits[0] == '+' || digits[0] == '-')) {
    sign = digits[0] == '-' ? -1.0 : 1.0;
    digits.remove_prefix(1);
  }
  double v = 0.0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size()) {
    throw ParseError("TAL " + std::to_string(index) + ": bad number '" + std::string(s) + "'",
                     offset);
  }
  return sign * v;
}

struct Located {
  HypnogramEntry entry;
  std::size_t offset;
};

}  // namespace

Hypnogram parse_tal_annotations(std::string_view bytes, const StageTable& table) {
  std::vector<Located> found;
  std::size_t pos = 0, index = 0;
  while (pos < bytes.size()) {
    if (bytes[pos] == '\0') {
      ++pos;
      continue;
    }
    const std::size_t end = bytes.find('\0', pos);
    if (end == std::string_view::npos) {
      throw ParseError("TAL " + std::to_string(index) + " is not NUL terminated", pos);
    }
    const std::string_view tal = bytes.substr(pos, end - pos);
    const std::size_t head_end = tal.find('\x14');
    if (head_end == std::string_view::npos || tal.back() != '\x14') {
      throw ParseError("TAL " + std::to_string(index) + " lacks the \\x14 delimiters", pos);
    }
    const std::string_view head = tal.substr(0, head_end);
    const std::size_t dur_at = head.find('\x15');
    const double onset =
        parse_tal_number(head.substr(0, dur_at), true, index, pos);
    double duration = 0.0;
    if (dur_at != std::string_view::npos) {
      duration = parse_tal_number(head.substr(dur_at + 1), false, index, pos + dur_at + 1);
      if (duration < 0.0) {
        throw ParseError("TAL " + std::to_string(index) + ": negative duration", pos + dur_at);
      }
    }
    std::size_t t = head_end + 1;
    while (t < tal.size()) {
      const std::size_t next = tal.find('\x14', t);
      const std::string text(tal.substr(t, next - t));
      if (const auto it = table.find(text); it != table.end()) {
        found.push_back({{onset, duration, it->second}, pos});
      }
      t = next + 1;
    }
    pos = end + 1;
    ++index;
  }
  std::stable_sort(found.begin(), found.end(), [](const Located& a, const Located& b) {
    return a.entry.onset_s < b.entry.onset_s;
  });
  Hypnogram hyp;
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (i > 0) {
      const auto& prev = found[i - 1].entry;
      if (found[i].entry.onset_s < prev.onset_s + prev.duration_s) {
        throw ParseError("overlapping stage annotations", found[i].offset);
      }
    }
    hyp.entries.push_back(found[i].entry);
  }
  return hyp;
}

std::string encode_tal(const Hypnogram& hyp) {
  static const char* names[] = {"Sleep stage W", "Sleep stage 1", "Sleep stage 2",
                                "Sleep stage 3", "Sleep stage R", "Sleep stage ?"};
  std::string out = "+0\x14\x14";
  out.push_back('\0');
  for (const auto& e : hyp.entries) {
    out += (e.onset_s < 0.0 ? "" : "+") + format_number(e.onset_s);
    out += '\x15' + format_number(e.duration_s);
    out += '\x14';
    out += names[static_cast<int>(e.stage)];
    out += '\x14';
    out.push_back('\0');
  }
  return out;
}

std::vector<std::int16_t> pack_annotation_bytes(std::string_view bytes,
                                                std::size_t samples_per_record,
                                                std::size_t n_records) {
  const std::size_t capacity = 2 * samples_per_record * n_records;
  if (bytes.size() > capacity) {
    throw ContractError("annotation stream of " + std::to_string(bytes.size()) +
                        " bytes exceeds " + std::to_string(capacity));
  }
  std::string padded(bytes);
  padded.resize(capacity, '\0');
  std::vector<std::int16_t> out(samples_per_record * n_records);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto lo = static_cast<unsigned char>(padded[2 * i]);
    const auto hi = static_cast<unsigned char>(padded[2 * i + 1]);
    out[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  return out;
}

std::vector<int> parse_label_sidecar(std::string_view text) {
  std::vector<int> labels;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.size() != 1) {
      throw ParseError("label line " + std::to_string(labels.size() + 1) +
                           " must be one of W 1 2 3 R",
                       pos);
    }
    switch (line[0]) {
      case 'W': labels.push_back(0); break;
      case '1': labels.push_back(1); break;
      case '2': labels.push_back(2); break;
      case '3': labels.push_back(3); break;
      case 'R': labels.push_back(4); break;
      default:
        throw ParseError("label line " + std::to_string(labels.size() + 1) + ": unknown stage '" +
                             std::string(line) + "'",
                         pos);
    }
    pos = end + 1;
  }
  return labels;
}

std::string format_label_sidecar(const std::vector<int>& labels) {
  static constexpr char codes[] = {'W', '1', '2', '3', 'R'};
  std::string out;
  out.reserve(labels.size() * 2);
  for (int l : labels) {
    if (l < 0 || l > 4) throw DataError("label " + std::to_string(l) + " outside {0..4}");
    out.push_back(codes[l]);
    out.push_back('\n');
  }
  return out;
}

}  // namespace sst
