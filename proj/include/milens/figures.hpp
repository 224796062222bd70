#pragma once

#include <string>
#include <vector>

namespace milens {

// Builds the named figure from completed runs under `runs_glob` and returns
// SVG text. Errors list the expected run configurations when nothing matches.
std::string render_figure(const std::string& figure_id, const std::string& runs_glob);

std::vector<std::string> known_figure_ids();

}  // namespace milens
