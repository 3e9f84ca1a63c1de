#include "tilepress/http.hpp"

#include <json.hpp>

namespace tilepress {

std::string error_body(const std::string& code, const std::string& detail) {
  nlohmann::ordered_json j;
  j["error"] = code;
  j["detail"] = detail;
  return j.dump();
}

HttpResponse error_response(int status, const std::string& code, const std::string& detail) {
  return {status, "application/json", error_body(code, detail)};
}

}  // namespace tilepress
