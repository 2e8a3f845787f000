#include "testutil.hpp"

#include <array>
#include <cctype>
#include <cmath>

namespace matmamba::testutil {

namespace {

const std::array<const char*, 48> kNouns = {
    "river",   "mountain", "forest",  "harbor",  "lantern",  "meadow",
    "sparrow", "willow",   "valley",  "garden",  "mill",     "bridge",
    "orchard", "cottage",  "cliff",   "island",  "bell",     "road",
    "market",  "tower",    "field",   "stream",  "stone",    "gate",
    "ferry",   "granary",  "quarry",  "spire",   "hearth",   "paddock",
    "coppice", "estuary",  "terrace", "archway", "wharf",    "harvest",
    "shepherd", "miller",  "mason",   "weaver",  "carter",   "keeper",
    "smith",   "warden",   "tailor",  "scribe",  "gardener", "fisher"};

const std::array<const char*, 28> kVerbs = {
    "watches",  "crosses",  "follows", "remembers", "shelters", "carries",
    "greets",   "holds",    "passes",  "borders",   "feeds",    "guards",
    "shades",   "reaches",  "faces",   "joins",     "repairs",  "measures",
    "surveys",  "restores", "records", "trades",    "gathers",  "counts",
    "inspects", "mentions", "visits",  "avoids"};

const std::array<const char*, 28> kAdjectives = {
    "quiet",   "old",     "green",   "narrow",  "bright",  "distant",
    "small",   "stony",   "golden",  "cold",    "broad",   "hidden",
    "tall",    "gentle",  "early",   "winding", "weathered", "mossy",
    "crooked", "silent",  "amber",   "pale",    "steep",   "low",
    "ancient", "shaded",  "eastern", "western"};

const std::array<const char*, 14> kAdverbs = {
    "slowly",    "often",   "quietly", "early",  "together", "again",
    "still",     "daily",   "rarely",  "twice",  "gladly",   "at dusk",
    "by morning", "at noon"};

const std::array<const char*, 10> kPlaces = {
    "north", "south",  "east",   "west",   "spring",
    "autumn", "winter", "summer", "lowlands", "highlands"};

const std::array<const char*, 12> kNames = {
    "Alder", "Bryn",  "Corin", "Delia", "Edwin",  "Freya",
    "Gale",  "Haral", "Imke",  "Joren", "Katrin", "Loren"};

template <size_t N>
const char* pick(const std::array<const char*, N>& pool, Rng& rng) {
  return pool[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(N)))];
}

std::string noun_phrase(Rng& rng) {
  static const char* dets[] = {"the", "a", "every", "this", "that"};
  std::string np = dets[rng.uniform_int(5)];
  if (rng.uniform() < 0.55) np += std::string(" ") + pick(kAdjectives, rng);
  np += std::string(" ") + pick(kNouns, rng);
  if (rng.uniform() < 0.3) {
    np += (rng.uniform() < 0.5 ? std::string(" of the ")
                               : std::string(" near the ")) +
          pick(kNouns, rng);
  }
  return np;
}

std::string clause(Rng& rng) {
  std::string s;
  if (rng.uniform() < 0.25) {
    s = std::string(pick(kNames, rng)) + " " + pick(kVerbs, rng) + " " +
        noun_phrase(rng);
  } else {
    s = noun_phrase(rng) + " " + pick(kVerbs, rng) + " " + noun_phrase(rng);
  }
  if (rng.uniform() < 0.35) s += std::string(" ") + pick(kAdverbs, rng);
  return s;
}

std::string sentence(Rng& rng) {
  std::string s;
  const double r = rng.uniform();
  if (r < 0.2) {
    s = std::string("In the ") + pick(kPlaces, rng) + ", " + clause(rng);
  } else if (r < 0.3) {
    const int64_t year = 1680 + rng.uniform_int(240);
    s = "In " + std::to_string(year) + ", " + clause(rng);
  } else {
    s = clause(rng);
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(s[0]));
  }
  const double tail = rng.uniform();
  if (tail < 0.25) {
    s += ", and " + clause(rng);
  } else if (tail < 0.4) {
    s += (rng.uniform() < 0.5 ? "; meanwhile, " : ", while ") + clause(rng);
  }
  return s;
}

}  // namespace

std::string synth_corpus(uint64_t seed, size_t target_bytes) {
  Rng rng(seed);
  std::string out;
  out.reserve(target_bytes + 256);
  int sentence_in_paragraph = 0;
  while (out.size() < target_bytes) {
    out += sentence(rng);
    ++sentence_in_paragraph;
    if (sentence_in_paragraph >= 4 + rng.uniform_int(4)) {
      out += ".\n\n";
      sentence_in_paragraph = 0;
    } else {
      out += ". ";
    }
  }
  out.resize(target_bytes);
  return out;
}

ImageDataset synth_images(uint64_t seed, int64_t count, int64_t size,
                          int64_t classes) {
  Rng rng(seed);
  ImageDataset ds;
  ds.h = size;
  ds.w = size;
  ds.c = 3;
  ds.labels.resize(static_cast<size_t>(count));
  ds.pixels.resize(static_cast<size_t>(count * size * size * 3));
  const double pi = 3.14159265358979323846;
  for (int64_t i = 0; i < count; ++i) {
    const int64_t cls = i % classes;
    ds.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(cls);
    const double angle = pi * static_cast<double>(cls) /
                         static_cast<double>(classes);
    const double freq =
        (0.35 + 0.10 * static_cast<double>(cls % 5)) * 2.0 * pi / 8.0;
    const double phase = rng.uniform(0.0, 2.0 * pi);
    // per-class channel balance
    const double rw = 0.6 + 0.4 * std::cos(2.0 * pi * cls / classes);
    const double gw = 0.6 + 0.4 * std::sin(2.0 * pi * cls / classes);
    const double bw = 0.6 + 0.4 * std::cos(pi * cls / classes);
    uint8_t* img = ds.pixels.data() + i * size * size * 3;
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const double proj = std::cos(angle) * static_cast<double>(x) +
                            std::sin(angle) * static_cast<double>(y);
        const double base = 0.5 + 0.4 * std::sin(freq * proj + phase);
        const double noise = rng.uniform(-0.06, 0.06);
        const double chans[3] = {base * rw, base * gw, base * bw};
        for (int64_t c = 0; c < 3; ++c) {
          double v = chans[c] + noise;
          v = std::min(1.0, std::max(0.0, v));
          img[(y * size + x) * 3 + c] = static_cast<uint8_t>(v * 255.0);
        }
      }
    }
  }
  return ds;
}

}  // namespace matmamba::testutil
