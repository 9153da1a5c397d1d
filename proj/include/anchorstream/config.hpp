#pragma once

#include <map>
#include <string>

#include "anchorstream/engine.hpp"

namespace anchorstream {

// Flat `key = value` config text: one pair per line, `#` comments, blank
// lines ignored. Keys are typed by the engine schema — unknown keys and
// type mismatches are ConfigErrors (with the line for parse problems).
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Applies `pairs` on top of `base`. Every engine knob is reachable; the
// full resolved state always echoes back out through config_to_map so a
// report never hides an effective setting.
EngineConfig apply_config_pairs(EngineConfig base,
                                const std::map<std::string, std::string>& pairs);

// Every knob, stringified — the exact inverse of apply_config_pairs.
std::map<std::string, std::string> config_to_map(const EngineConfig& config);

std::string to_string(Protocol p);
std::string to_string(Strategy s);
std::string to_string(AnchorMode m);
std::string to_string(KlForm f);
std::string to_string(GaForm f);
std::string to_string(CountPer c);

}  // namespace anchorstream
