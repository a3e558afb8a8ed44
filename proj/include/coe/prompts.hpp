#pragma once

#include <map>
#include <string>
#include <string_view>

namespace coe::prompts {

// Text assets compiled in from prompts/*.txt.
std::string_view describe();
std::string_view coe();
std::string_view coe_eval();
std::string_view rubric();
std::string_view filter();
std::string_view entail();
std::string_view caption();

// Replaces every {{name}} with vars.at(name). A placeholder without a value
// throws; unused values are ignored. Text substituted in is not rescanned.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars);

}  // namespace coe::prompts
