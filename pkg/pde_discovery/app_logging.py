import logging
import os

from logging.handlers import TimedRotatingFileHandler

log_format_default = '[%(asctime)s] %(levelname)s %(module)s: %(funcName)s(%(lineno)d): %(message)s'

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
                    datefmt='%m-%d %H:%M:%S')


def file_handler(app_name, log_dir='logs'):
    os.makedirs(log_dir, exist_ok=True)
    rotating_file_handler = TimedRotatingFileHandler(
        filename=os.path.join(log_dir, '%s.log' % app_name),
        when='midnight',
        backupCount=5
    )
    rotating_file_handler.setLevel(logging.INFO)
    rotating_file_handler.setFormatter(
        logging.Formatter(log_format_default))
    return rotating_file_handler


def default_handler(debug=False):
    stream = logging.StreamHandler()
    stream.setLevel(logging.DEBUG if debug else logging.INFO)
    stream.setFormatter(logging.Formatter(log_format_default))
    return stream
