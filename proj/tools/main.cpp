#include "segres/cli.hpp"

int main(int argc, char** argv) { return segres::cli_main(argc, argv); }
