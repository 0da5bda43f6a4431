import datetime
import logging
import os


def configure(console_level=logging.INFO, file_level=logging.DEBUG, logfile_name=None, directory=None):
    """
    Configures logging formatting

    :param console_level: log level of console logger
    :param file_level: log level of file logger
    :param logfile_name: name of logfile, prefixed with the current date and time
    :param directory: directory of the logfile, the working directory if None
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)

    formatter = logging.Formatter(
        "[%(asctime)s] %(name)s %(funcName)s::%(lineno)s %(levelname)s - %(message)s",
        "%H:%M:%S"
    )

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(console_level)
    root_logger.addHandler(console_handler)

    if logfile_name is not None:
        name_of_file = datetime.datetime.now().strftime(f'%Y-%m-%d_%H-%M_{logfile_name}.log')
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            name_of_file = os.path.join(directory, name_of_file)

        file_handler = logging.FileHandler(name_of_file)
        file_handler.setLevel(file_level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    # numerical libraries are chatty on DEBUG
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    return root_logger
