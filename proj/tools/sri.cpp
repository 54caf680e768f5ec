#include "sri/cli.hpp"

int main(int argc, char** argv) { return sri::cli::run(argc, argv); }
