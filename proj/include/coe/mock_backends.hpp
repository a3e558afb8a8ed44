#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coe/llm_gateway.hpp"

namespace coe {

// Offline stand-ins for the model roles. Each returns a MockFn that is
// deterministic in the request content.

// Script document: {"vocabulary": [...], "images": {"<sha256 of bytes>": [atoms]}}.
// Images not in the script draw Q vocabulary entries by hashing; an empty
// list leaves the image out of the reply.
struct DescriberScript {
  std::map<std::string, std::vector<std::string>> by_image_sha;
  std::vector<std::string> vocabulary;

  static DescriberScript load(const std::filesystem::path& path);
};

MockFn mock_describer(DescriberScript script, std::size_t q);

// Builds a narrative from the structured chain block in the prompt.
MockFn mock_synthesizer();

// Rubric heuristic on the explanation block; `scripted` maps the sha256 of
// an explanation to a fixed judge reply.
MockFn mock_judge(std::map<std::string, std::string> scripted = {});

// Caption per image sha256, "an image" otherwise.
MockFn mock_captioner(std::map<std::string, std::string> by_image_sha = {});

// Text between "<<<NAME\n" and "\nNAME>>>", or nullopt.
std::optional<std::string> extract_block(std::string_view text, std::string_view name);

}  // namespace coe
