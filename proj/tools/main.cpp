#include "cli.hpp"

int main(int argc, char** argv) { return dml::cli::run(argc, argv); }
