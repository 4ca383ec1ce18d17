#pragma once

namespace grounder {

// Full command-line surface: gen-data | train | eval | ablate | attn-dump.
// Returns 0 on success, 1 on runtime failure (one-line error on stderr),
// 2 on usage errors.
int cli_main(int argc, const char* const* argv);

}  // namespace grounder
