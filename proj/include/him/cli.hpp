#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>

namespace him {

// 0 on success, 1 on usage errors, 2 on data errors. "-" paths use the
// given streams.
int cli_main(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

// YYYY-MM-DDTHH:MM[:SS] with an optional Z or +hh:mm / -hh:mm suffix; no
// suffix means UTC. Returns epoch seconds.
std::int64_t parse_iso8601(std::string_view text);

}  // namespace him
