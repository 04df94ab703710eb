#pragma once

// EDF / EDF+ reading and writing, TAL annotation decoding and the plain-text
// label sidecar.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sst {

struct EdfSignalHeader {
  std::string label;          // 16
  std::string transducer;     // 80
  std::string physical_dim;   // 8
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  std::string prefiltering;   // 80
  int samples_per_record = 0;
  std::string reserved;       // 32

  bool is_annotation() const { return label == "EDF Annotations"; }

  friend bool operator==(const EdfSignalHeader&, const EdfSignalHeader&) = default;
};

struct EdfHeader {
  std::string version = "0";  // 8
  std::string patient;        // 80
  std::string recording;      // 80
  std::string start_date = "01.01.00";
  std::string start_time = "00.00.00";
  int header_bytes = 0;
  std::string reserved;       // 44, "EDF+C" for EDF+
  int n_records = 0;
  double record_duration_s = 1.0;
  std::vector<EdfSignalHeader> signals;

  friend bool operator==(const EdfHeader&, const EdfHeader&) = default;
};

struct SignalTrace {
  std::string label;
  double fs = 0.0;  // samples_per_record / record_duration_s
  std::vector<double> samples;
};

struct EdfFile {
  EdfHeader header;
  std::vector<std::vector<std::int16_t>> digital;  // per signal, all records
  std::vector<SignalTrace> traces;                 // physical values, data signals only
  std::string annotations;                         // raw bytes of annotation signals
  std::vector<std::string> warnings;               // lenient mode only
};

// (d - dmin) * (pmax - pmin) / (dmax - dmin) + pmin
double digital_to_physical(const EdfSignalHeader& s, std::int16_t d);
// Inverse scaling, rounded and clamped to the digital range.
std::int16_t physical_to_digital(const EdfSignalHeader& s, double v);

// Serialises a file. header_bytes and n_records are derived from the data;
// each digital[i] must hold n_records * samples_per_record values.
std::string write_edf(EdfHeader header, const std::vector<std::vector<std::int16_t>>& digital);

// Strict by default: fixed-width ASCII fields must be left-aligned and
// space padded, header_bytes must equal 256 * (1 + n_signals), and the data
// section must be exactly n_records records long. Lenient mode trims stray
// padding, tolerates trailing bytes and an unknown record count, and
// reports each repair in `warnings`. Throws ParseError with the offending
// byte offset.
EdfFile parse_edf(std::string_view bytes, bool lenient = false);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

enum class Stage : int { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4, Other = 5 };

const char* stage_name(Stage s);

struct HypnogramEntry {
  double onset_s = 0.0;
  double duration_s = 0.0;
  Stage stage = Stage::Other;

  friend bool operator==(const HypnogramEntry&, const HypnogramEntry&) = default;
};

struct Hypnogram {
  std::vector<HypnogramEntry> entries;  // onset-sorted, non-overlapping
};

using StageTable = std::map<std::string, Stage>;

// Sleep-EDF / R&K strings; stage 4 merges into N3.
const StageTable& default_stage_table();

// Decodes "+onset[\x15duration]\x14text\x14...\x00" lists. Texts missing from
// `table` (including the empty time-keeping annotation) are skipped.
// ParseError on a malformed list, with the list index in the message.
Hypnogram parse_tal_annotations(std::string_view bytes,
                                const StageTable& table = default_stage_table());

// One TAL per entry, named with the first table string for its stage.
std::string encode_tal(const Hypnogram& hyp);

// Annotation bytes padded with NULs and packed into int16 samples for a
// signal of `samples_per_record` values per record.
std::vector<std::int16_t> pack_annotation_bytes(std::string_view bytes,
                                                std::size_t samples_per_record,
                                                std::size_t n_records);

// Label sidecar: one epoch per line, one of W 1 2 3 R.
std::vector<int> parse_label_sidecar(std::string_view text);
std::string format_label_sidecar(const std::vector<int>& labels);

}  // namespace sst
