#include "coe/prompts.hpp"

#include "coe/error.hpp"
#include "prompt_assets.hpp"

namespace coe::prompts {

std::string_view describe() { return assets::describe; }
std::string_view coe() { return assets::coe; }
std::string_view coe_eval() { return assets::coe_eval; }
std::string_view rubric() { return assets::rubric; }
std::string_view filter() { return assets::filter; }
std::string_view entail() { return assets::entail; }
std::string_view caption() { return assets::caption; }

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (true) {
    auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    std::string name(tmpl.substr(open + 2, close - open - 2));
    auto it = vars.find(name);
    if (it == vars.end()) throw Error("prompt placeholder '" + name + "' has no value");
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

}  // namespace coe::prompts
