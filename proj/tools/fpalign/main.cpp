#include "fpalign/cli.hpp"

int main(int argc, char** argv) { return fpalign::cli::run(argc, argv); }
